"""The four significance-score levels, from discriminator outputs.

Trains the toy pipeline briefly on synthetic two-domain data, then walks one
source image through the dual discriminators and derives all four binary
scores: image, patch, pixel, and patch-pixel. The score maps are exported as
grayscale PNGs (white = 1 = target-like = upweighted during adaptation).
"""

import pathlib
import tempfile

import numpy as np

from asnet import coarse, scoring
from asnet.data import SynthSpec, load_dataset, save_gray, synth_dataset
from asnet.models import reassemble_patches
from asnet.trainer import toy_config, train

out = pathlib.Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
root = pathlib.Path(tempfile.mkdtemp(prefix="scoring_"))

spec = SynthSpec(seed=5)
synth_dataset(spec, 16, "source", root / "source", split="train")
synth_dataset(spec, 16, "target", root / "target", split="train")
src = load_dataset(root / "source", "train")
tgt = load_dataset(root / "target", "train")

print("Training the toy pipeline for 150 steps (fine mode)...")
cfg = toy_config(mode="fine", batch=4, seed=0, epochs=10**6, max_steps=150)
result = train(cfg, src, tgt, root / "run")
print(f"  final step losses: {result.reports[-1].as_dict()}")

from asnet.trainer import load_checkpoint
from asnet.data import preprocess

state = load_checkpoint(result.checkpoint_dir)
sample = src[0]
image, _ = preprocess(sample, cfg.input_size, cfg.output_stride, cfg.kernel_spec(), rng=None)
pred4, _ = state.generator.forward(image[None], need_cache=False)
pred = pred4[:, 0]
print(f"\nSource image {sample.name!r}: predicted count {pred.sum():.2f} "
      f"(annotated {sample.annotation.count})")

o1, _ = state.d1.forward(pred4, need_cache=False)
views, _ = coarse.local_views(pred, cfg.s)
o2, _ = state.d2.forward(views.reshape(-1, 1, *views.shape[2:]), need_cache=False)
o2 = o2.reshape(1, cfg.s * cfg.s, *o2.shape[2:])
print(f"global discrimination map O1: mean {o1.mean():.3f} "
      f"(below 0.5 would mark the whole image as transferable)")

scores = scoring.score_batch(o1[:, 0], o2, pred.shape[1:], cfg.s, cfg.tau_img)
print(f"image score W1 = {int(scores.s_img[0])}")
print(f"patch scores W2 = {scores.s_patch[0].astype(int).tolist()} (row-major)")
print(f"pixel score W3: {scores.s_pix[0].mean():.0%} of cells upweighted")
print(f"patch-pixel score W4: {scores.s_ppx[0].mean():.0%} of cells upweighted")

h, w = pred.shape[1:]
hp, wp = h // cfg.s, w // cfg.s
maps = {
    "s_img": np.full((h, w), float(scores.s_img[0])),
    "s_patch": reassemble_patches(
        np.broadcast_to(scores.s_patch[0][:, None, None], (cfg.s**2, hp, wp)).astype(float),
        cfg.s,
    ),
    "s_pix": scores.s_pix[0].astype(float),
    "s_ppx": scores.s_ppx[0].astype(float),
}
for name, arr in maps.items():
    save_gray(out / f"demo_{name}.png", arr)
print(f"\nWrote score maps to {out}/demo_s_*.png")
