"""Alternating adversarial training loop and evaluation.

Each step follows the three-player protocol: forward both domains through
the generator, update the global discriminator on its classification loss,
update the local discriminator on the lambda3-scaled loss, then update the
generator on the weighted density loss plus the adversarial terms, with the
discriminators frozen. Significance scores are taken from the discriminator
outputs produced *before* the discriminator updates of the same step.

Three modes: ``noadapt`` trains on source supervision only, ``coarse`` adds
the adversarial alignment, ``fine`` additionally weights the source density
loss by the four significance scores.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import coarse, objective
from .data import Sample, flip_points, preprocess
from .density import KernelSpec, PointAnnotation, downsample_count_preserving, points_to_density
from .metrics import CountRecord, apply_roi, game, mae_mse
from .models import DISCRIMINATOR_MIN_INPUT, Discriminator, Generator, GENERATOR_STRIDES
from .scoring import score_batch

MODES = ("noadapt", "coarse", "fine")


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters; defaults follow the reference setup."""

    mode: str = "fine"
    backbone: str = "vgg16"
    input_size: int = 512
    batch: int = 4
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0
    s: int = 4
    tau_img: float = 0.5
    lambda1: float = 1e-3
    lambda2: float = 1e-4
    lambda3: float = 1e-1
    g_optimizer: str = "sgd"
    g_lr: float = 1e-6
    g_momentum: float = 0.0
    d_optimizer: str = "adam"
    d_lr: float = 1e-4
    residual: bool = True
    clip_norm: float | None = None
    sigma: float = 4.0
    kernel_mode: str = "fixed"
    flip_prob: float = 0.5
    checkpoint_every: int = 0  # extra checkpoints every N steps; 0 = final only

    @property
    def output_stride(self) -> int:
        return GENERATOR_STRIDES[self.backbone]

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.backbone not in GENERATOR_STRIDES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("lambda weights must be nonnegative")
        if self.s < 1:
            raise ValueError(f"patch grid s must be >= 1, got {self.s}")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")
        block = self.output_stride * self.s
        if self.input_size % block:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by "
                f"output_stride*s = {block}"
            )
        if self.mode != "noadapt":
            map_size = self.input_size // self.output_stride
            if map_size < DISCRIMINATOR_MIN_INPUT:
                raise ValueError(
                    f"density maps of {map_size}px are too small for the "
                    f"discriminator (min {DISCRIMINATOR_MIN_INPUT})"
                )

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(mode=self.kernel_mode, sigma=self.sigma)


def toy_config(**overrides) -> TrainConfig:
    """CPU desk-scale defaults: toy backbone at 64x64 inputs.

    The generator trains with Adam here: the unnormalized sum-form density
    loss has a steep, scale-dependent curvature at random init, and plain
    SGD needs impractically small steps on this tiny backbone.
    """
    base = dict(
        backbone="toy",
        input_size=64,
        batch=8,
        s=2,
        g_optimizer="adam",
        g_lr=1e-4,
        sigma=1.5,
        epochs=10,
    )
    base.update(overrides)
    return TrainConfig(**base)


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class StepReport:
    """One training step for the JSON-lines log."""

    step: int
    l_den: float
    l_dens: float
    l_adv1: float
    l_adv2: float
    l_total: float
    d1_loss: float
    d2_loss: float
    score_stats: dict | None
    wall_time: float

    def as_dict(self) -> dict:
        out = {
            "step": self.step,
            "l_den": self.l_den,
            "l_dens": self.l_dens,
            "l_adv1": self.l_adv1,
            "l_adv2": self.l_adv2,
            "l_total": self.l_total,
            "d1_loss": self.d1_loss,
            "d2_loss": self.d2_loss,
            "wall_time": self.wall_time,
        }
        if self.score_stats is not None:
            out["score_stats"] = self.score_stats
        return out


class SGD:
    def __init__(self, params: OrderedDict, lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()} if momentum else None

    def step(self, grads: dict) -> None:
        for name, p in self.params.items():
            g = grads[name]
            if self.velocity is not None:
                v = self.velocity[name]
                v *= self.momentum
                v += g
                g = v
            p -= (self.lr * g).astype(p.dtype, copy=False)


class Adam:
    def __init__(self, params: OrderedDict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p -= (self.lr * update).astype(p.dtype, copy=False)


def _make_optimizer(kind: str, params: OrderedDict, lr: float, momentum: float = 0.0):
    if kind == "sgd":
        return SGD(params, lr, momentum)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the norm."""
    total = math.sqrt(sum(float(np.square(g).sum()) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TrainerState:
    config: TrainConfig
    generator: Generator
    d1: Discriminator
    d2: Discriminator
    g_opt: SGD | Adam
    d1_opt: SGD | Adam
    d2_opt: SGD | Adam
    step: int = 0


def init_state(config: TrainConfig, dtype=np.float32) -> TrainerState:
    """Build networks and optimizers, deterministically from the config seed."""
    config.validate()
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    d_variant = "full" if config.backbone == "vgg16" else "toy"
    gen = Generator(config.backbone, rng=np.random.default_rng(seeds[0]), dtype=dtype)
    d1 = Discriminator(d_variant, rng=np.random.default_rng(seeds[1]), dtype=dtype)
    d2 = Discriminator(d_variant, rng=np.random.default_rng(seeds[2]), dtype=dtype)
    g_opt = _make_optimizer(config.g_optimizer, gen.net.parameters(), config.g_lr, config.g_momentum)
    d1_opt = _make_optimizer(config.d_optimizer, d1.net.parameters(), config.d_lr)
    d2_opt = _make_optimizer(config.d_optimizer, d2.net.parameters(), config.d_lr)
    return TrainerState(config, gen, d1, d2, g_opt, d1_opt, d2_opt)


def _snapshot_extrema(**arrays) -> dict:
    out = {}
    for name, arr in arrays.items():
        if arr is None:
            continue
        out[name] = {"min": float(np.min(arr)), "max": float(np.max(arr))}
    return out


def train_step(
    state: TrainerState,
    src_images: np.ndarray,
    src_targets: np.ndarray,
    tgt_images: np.ndarray | None,
    on_phase=None,
) -> StepReport:
    """One alternating update; returns the per-step report.

    ``on_phase``, when given, is called with "d1_updated", "d2_updated" and
    "generator_updated" right after each sub-update (diagnostics hook).
    """
    t0 = time.perf_counter()
    cfg = state.config
    gen, d1, d2 = state.generator, state.d1, state.d2
    dtype = src_images.dtype

    def phase(name):
        if on_phase is not None:
            on_phase(name)

    pred_s4, tape_s = gen.forward(src_images)
    pred_s = pred_s4[:, 0]
    if not np.isfinite(pred_s).all():
        raise RuntimeError(
            f"non-finite generator output on source batch at step {state.step}; "
            f"extrema: {_snapshot_extrema(pred_source=pred_s)}"
        )
    l_den = objective.density_loss(pred_s, src_targets)

    if cfg.mode == "noadapt":
        gen.net.zero_grad()
        dmap = objective.density_loss_grad(pred_s, src_targets)[:, None].astype(dtype)
        gen.backward(dmap, tape_s)
        grads = gen.net.gradients()
        if cfg.clip_norm:
            clip_gradients(grads, cfg.clip_norm)
        state.g_opt.step(grads)
        phase("generator_updated")
        report = StepReport(
            step=state.step,
            l_den=l_den,
            l_dens=l_den,
            l_adv1=0.0,
            l_adv2=0.0,
            l_total=l_den,
            d1_loss=0.0,
            d2_loss=0.0,
            score_stats=None,
            wall_time=time.perf_counter() - t0,
        )
        _check_report_finite(state, report, pred_s, None)
        state.step += 1
        return report

    if tgt_images is None:
        raise ValueError(f"mode {cfg.mode!r} requires a target batch")
    n_src = src_images.shape[0]
    pred_t4, tape_t = gen.forward(tgt_images)
    pred_t = pred_t4[:, 0]
    if not np.isfinite(pred_t).all():
        raise RuntimeError(
            f"non-finite generator output on target batch at step {state.step}; "
            f"extrema: {_snapshot_extrema(pred_target=pred_t)}"
        )

    # --- global discriminator: classify, derive image/pixel scores, update
    o1_all, d1_tape = d1.forward(np.concatenate([pred_s4, pred_t4]))
    o1_s, o1_t = o1_all[:n_src, 0], o1_all[n_src:, 0]
    d1_loss = coarse.discriminator_loss(o1_s, o1_t)
    g_src, g_tgt = coarse.discriminator_loss_grads(o1_s, o1_t)
    d1.net.zero_grad()
    d1.backward(
        np.concatenate([g_src, g_tgt])[:, None].astype(dtype), d1_tape, need_input_grad=False
    )
    state.d1_opt.step(d1.net.gradients())
    phase("d1_updated")

    # --- local discriminator on patch views, scaled by lambda3
    views_s, factor = coarse.local_views(pred_s, cfg.s)
    views_t, _ = coarse.local_views(pred_t, cfg.s)
    n_patches = cfg.s * cfg.s
    vh, vw = views_s.shape[2], views_s.shape[3]
    flat = np.concatenate([views_s, views_t]).reshape(-1, 1, vh, vw)
    o2_all, d2_tape = d2.forward(flat)
    oh2, ow2 = o2_all.shape[2], o2_all.shape[3]
    o2_maps = o2_all.reshape(2 * n_src, n_patches, oh2, ow2)
    o2_s, o2_t = o2_maps[:n_src], o2_maps[n_src:]
    d2_loss = coarse.discriminator_loss(o2_s, o2_t)
    g2_src, g2_tgt = coarse.discriminator_loss_grads(o2_s, o2_t)
    d2.net.zero_grad()
    d2_grad = (cfg.lambda3 * np.concatenate([g2_src, g2_tgt])).reshape(-1, 1, oh2, ow2)
    d2.backward(d2_grad.astype(dtype), d2_tape, need_input_grad=False)
    state.d2_opt.step(d2.net.gradients())
    phase("d2_updated")

    # --- significance scores from the pre-update discriminator outputs
    scores = None
    if cfg.mode == "fine":
        scores = score_batch(o1_s, o2_s, pred_s.shape[1:], cfg.s, cfg.tau_img)

    # --- generator: density term plus adversarial terms through frozen Ds
    o1_t2, a1_tape = d1.forward(pred_t4)
    l_adv1 = coarse.adversarial_loss(o1_t2[:, 0])
    da1 = (cfg.lambda1 * coarse.adversarial_loss_grad(o1_t2[:, 0]))[:, None]
    dpred_t = d1.backward(da1.astype(dtype), a1_tape, accumulate=False)

    views_t2, factor2 = coarse.local_views(pred_t, cfg.s)
    o2_t2, a2_tape = d2.forward(views_t2.reshape(-1, 1, vh, vw))
    o2_t2_maps = o2_t2.reshape(n_src, n_patches, oh2, ow2)
    l_adv2 = coarse.adversarial_loss(o2_t2_maps)
    da2 = (cfg.lambda2 * coarse.adversarial_loss_grad(o2_t2_maps)).reshape(-1, 1, oh2, ow2)
    dviews = d2.backward(da2.astype(dtype), a2_tape, accumulate=False)
    dpred_t += coarse.local_views_backward(
        dviews.reshape(n_src, n_patches, vh, vw), factor2, cfg.s
    )[:, None]

    if cfg.mode == "fine":
        l_dens = objective.weighted_density_loss(pred_s, src_targets, scores, cfg.s, cfg.residual)
        dpred_s = objective.weighted_density_loss_grad(
            pred_s, src_targets, scores, cfg.s, cfg.residual
        )
    else:
        l_dens = l_den
        dpred_s = objective.density_loss_grad(pred_s, src_targets)

    gen.net.zero_grad()
    gen.backward(dpred_s[:, None].astype(dtype), tape_s)
    gen.backward(dpred_t.astype(dtype), tape_t)
    grads = gen.net.gradients()
    if cfg.clip_norm:
        clip_gradients(grads, cfg.clip_norm)
    state.g_opt.step(grads)
    phase("generator_updated")

    l_total = objective.total_generator_loss(l_dens, l_adv1, l_adv2, cfg.lambda1, cfg.lambda2)
    report = StepReport(
        step=state.step,
        l_den=l_den,
        l_dens=l_dens,
        l_adv1=l_adv1,
        l_adv2=l_adv2,
        l_total=l_total,
        d1_loss=d1_loss,
        d2_loss=d2_loss,
        score_stats=scores.stats() if scores is not None else None,
        wall_time=time.perf_counter() - t0,
    )
    _check_report_finite(state, report, pred_s, pred_t)
    state.step += 1
    return report


def _check_report_finite(state, report: StepReport, pred_s, pred_t) -> None:
    fields = {
        "l_den": report.l_den,
        "l_dens": report.l_dens,
        "l_adv1": report.l_adv1,
        "l_adv2": report.l_adv2,
        "l_total": report.l_total,
        "d1_loss": report.d1_loss,
        "d2_loss": report.d2_loss,
    }
    for name, value in fields.items():
        if not math.isfinite(value):
            snapshot = _snapshot_extrema(pred_source=pred_s, pred_target=pred_t)
            raise RuntimeError(
                f"non-finite loss {name}={value} at step {state.step}; "
                f"tensor extrema: {snapshot}"
            )


class TrainingPool:
    """Preprocessed in-memory samples with both flip orientations."""

    def __init__(self, dataset, config: TrainConfig, labeled: bool):
        kernel = config.kernel_spec()
        self.labeled = labeled
        self.images = []
        self.images_flipped = []
        self.targets = []
        self.targets_flipped = []
        for sample in dataset:
            if labeled and sample.annotation is None:
                raise ValueError(f"sample {sample.name!r} has no annotation")
            img, tgt = preprocess(
                sample, config.input_size, config.output_stride, kernel, rng=None
            )
            self.images.append(img)
            self.targets.append(tgt)
            img_f, tgt_f = preprocess(
                _flip_sample(sample), config.input_size, config.output_stride, kernel, rng=None
            )
            self.images_flipped.append(img_f)
            self.targets_flipped.append(tgt_f)
        if not self.images:
            raise ValueError("dataset is empty")

    def __len__(self):
        return len(self.images)

    def batch(self, indices, rng: np.random.Generator | None, flip_prob: float):
        images, targets = [], []
        for idx in indices:
            flip = rng is not None and rng.random() < flip_prob
            images.append(self.images_flipped[idx] if flip else self.images[idx])
            if self.labeled:
                targets.append(self.targets_flipped[idx] if flip else self.targets[idx])
        images = np.stack(images)
        return images, (np.stack(targets) if self.labeled else None)


def _flip_sample(sample):
    """Horizontally mirrored copy of a sample (image and points together)."""
    image = sample.image[:, ::-1, :].copy()
    ann = None
    if sample.annotation is not None:
        w = sample.annotation.image_size[1]
        ann = PointAnnotation(
            points=flip_points(sample.annotation.points, w),
            image_size=sample.annotation.image_size,
        )
    roi = sample.roi[:, ::-1].copy() if sample.roi is not None else None
    return Sample(name=sample.name + "~flip", image=image, annotation=ann, roi=roi)


@dataclass
class TrainResult:
    checkpoint_dir: Path
    log_path: Path
    reports: list
    final_metrics: dict | None


def save_checkpoint(out_dir, state: TrainerState) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for prefix, net in (("g", state.generator.net), ("d1", state.d1.net), ("d2", state.d2.net)):
        for name, arr in net.parameters().items():
            arrays[f"{prefix}.{name}"] = arr
    np.savez(out_dir / "weights.npz", **arrays)
    meta = {
        "step": state.step,
        "config_hash": config_hash(state.config),
        "backbone": state.config.backbone,
        "stride": state.config.output_stride,
        "config": asdict(state.config),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, default=str))
    return out_dir


def load_checkpoint(ckpt_dir) -> TrainerState:
    ckpt_dir = Path(ckpt_dir)
    meta = json.loads((ckpt_dir / "meta.json").read_text())
    raw = dict(meta["config"])
    if raw.get("max_steps") is not None:
        raw["max_steps"] = int(raw["max_steps"])
    if raw.get("clip_norm") is not None:
        raw["clip_norm"] = float(raw["clip_norm"])
    config = TrainConfig(**raw)
    state = init_state(config)
    with np.load(ckpt_dir / "weights.npz") as arrays:
        for prefix, net in (("g", state.generator.net), ("d1", state.d1.net), ("d2", state.d2.net)):
            net.load_state_dict(
                {k[len(prefix) + 1 :]: arrays[k] for k in arrays.files if k.startswith(prefix + ".")}
            )
    state.step = int(meta["step"])
    return state


def train(
    config: TrainConfig,
    source_dataset,
    target_dataset,
    out_dir,
    eval_dataset=None,
) -> TrainResult:
    """Run the full alternating optimization and write checkpoint plus log.

    The source loader defines an epoch; the target loader reshuffles
    independently. Deterministic for a fixed seed (single-threaded loading).
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = init_state(config)
    data_seed = np.random.SeedSequence([config.seed, 0x0DA7A]).spawn(3)
    src_rng = np.random.default_rng(data_seed[0])
    tgt_rng = np.random.default_rng(data_seed[1])
    flip_rng = np.random.default_rng(data_seed[2])

    src_pool = TrainingPool(source_dataset, config, labeled=True)
    tgt_pool = None
    if config.mode != "noadapt":
        tgt_pool = TrainingPool(target_dataset, config, labeled=False)
        if len(tgt_pool) < config.batch:
            raise ValueError("target dataset smaller than one batch")
    if len(src_pool) < config.batch:
        raise ValueError("source dataset smaller than one batch")

    steps_per_epoch = len(src_pool) // config.batch
    total = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total = min(total, config.max_steps)

    def target_stream():
        while True:
            order = tgt_rng.permutation(len(tgt_pool))
            for i in range(0, len(order) - config.batch + 1, config.batch):
                yield order[i : i + config.batch]

    tgt_batches = target_stream() if tgt_pool is not None else None
    reports = []
    log_path = out_dir / "train_log.jsonl"
    with log_path.open("w") as log:
        done = 0
        while done < total:
            order = src_rng.permutation(len(src_pool))
            for i in range(0, len(order) - config.batch + 1, config.batch):
                if done >= total:
                    break
                src_imgs, src_tgts = src_pool.batch(
                    order[i : i + config.batch], flip_rng, config.flip_prob
                )
                tgt_imgs = None
                if tgt_pool is not None:
                    tgt_imgs, _ = tgt_pool.batch(next(tgt_batches), flip_rng, config.flip_prob)
                report = train_step(state, src_imgs, src_tgts, tgt_imgs)
                reports.append(report)
                log.write(json.dumps(report.as_dict()) + "\n")
                done += 1
                if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                    save_checkpoint(out_dir / f"step_{state.step:06d}", state)
        final_metrics = None
        if eval_dataset is not None:
            final_metrics = evaluate(state.generator, eval_dataset, config=config)
            log.write(json.dumps({"final_eval": final_metrics}) + "\n")
    ckpt = save_checkpoint(out_dir / "checkpoint", state)
    return TrainResult(ckpt, log_path, reports, final_metrics)


def _pad_reflect(image: np.ndarray, multiple: int) -> np.ndarray:
    h, w = image.shape[1], image.shape[2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="reflect")


def evaluate(generator: Generator, dataset, config: TrainConfig | None = None, roi=None) -> dict:
    """Counting metrics of a generator over a labeled dataset.

    Full images are reflect-padded to the next multiple of stride*s, the
    prediction is cropped back, and metrics are computed on stride-resolution
    maps (region boundaries align to stride cells). An ROI mask zeroes
    density outside the region before counting.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("evaluation dataset is empty")
    stride = generator.output_stride
    s = config.s if config is not None else 1
    kernel = config.kernel_spec() if config is not None else KernelSpec()
    records = []
    game_totals = np.zeros(4, dtype=np.float64)
    for sample in samples:
        if sample.annotation is None:
            raise ValueError(f"sample {sample.name!r} has no annotation for evaluation")
        tensor = np.ascontiguousarray(sample.image.transpose(2, 0, 1), dtype=np.float32)
        padded = _pad_reflect(tensor, stride * s)
        pred4, _ = generator.forward(padded[None], need_cache=False)
        mh = -(-sample.image.shape[0] // stride)  # ceil division
        mw = -(-sample.image.shape[1] // stride)
        pred = pred4[0, 0][:mh, :mw].astype(np.float64)

        ph, pw = mh * stride, mw * stride
        canvas = PointAnnotation(points=sample.annotation.points, image_size=(ph, pw))
        gt = downsample_count_preserving(points_to_density(canvas, kernel), stride)

        mask = roi if roi is not None else sample.roi
        if mask is not None:
            pad_mask = np.zeros((ph, pw), dtype=np.float64)
            pad_mask[: mask.shape[0], : mask.shape[1]] = mask
            block = pad_mask.reshape(mh, stride, mw, stride).mean(axis=(1, 3))
            mask_map = (block > 0.5).astype(np.float64)
            pred = apply_roi(pred, mask_map)
            gt = apply_roi(gt, mask_map)

        records.append(CountRecord(predicted=float(pred.sum()), actual=float(gt.sum())))
        for level in range(4):
            game_totals[level] += game(pred, gt, level)
    mae, mse = mae_mse(records)
    n = len(samples)
    result = {"mae": mae, "mse": mse, "n_images": n}
    for level in range(4):
        result[f"game{level}"] = float(game_totals[level] / n)
    return result
