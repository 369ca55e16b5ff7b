"""Command-line surface: synth | density | train | eval | scores.

Every command echoes its resolved configuration as a single JSON line before
doing any work, so a run can be reproduced from its log. Exit codes: 0 on
success, 2 on usage errors, 1 on runtime failures (single-line diagnostic on
stderr). ``ASNET_LOG=debug|info`` controls verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import coarse, data, scoring
from . import trainer as training
from .density import KernelSpec, downsample_count_preserving, points_to_density
from .models import reassemble_patches

logger = logging.getLogger("asnet")

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(training.TrainConfig)}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file of TrainConfig keys")
    parser.add_argument("--mode", choices=training.MODES)
    parser.add_argument("--backbone", choices=("vgg16", "toy"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--s", type=int)
    parser.add_argument("--tau-img", dest="tau_img", type=float)
    parser.add_argument("--lambda1", type=float)
    parser.add_argument("--lambda2", type=float)
    parser.add_argument("--lambda3", type=float)
    parser.add_argument("--residual", type=_parse_bool)
    parser.add_argument("--input-size", dest="input_size", type=int)
    parser.add_argument("--g-lr", dest="g_lr", type=float)
    parser.add_argument("--d-lr", dest="d_lr", type=float)
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--max-steps", dest="max_steps", type=int)


def _resolve_config(args: argparse.Namespace) -> training.TrainConfig:
    values: dict = {}
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text())
        unknown = set(doc) - _CONFIG_FIELDS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    config = training.TrainConfig(**values)
    config.validate()
    return config


def _echo_config(command: str, payload: dict) -> None:
    print(f"effective-config {command} " + json.dumps(payload, sort_keys=True, default=str))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic two-domain dataset")
    p_synth.add_argument("--out", type=Path, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--n-train", type=int, default=48)
    p_synth.add_argument("--n-test", type=int, default=24)
    p_synth.add_argument("--size", type=int, default=64)
    p_synth.add_argument("--count-min", type=int, default=5)
    p_synth.add_argument("--count-max", type=int, default=30)

    p_density = sub.add_parser("density", help="convert annotations to density binaries")
    p_density.add_argument("--source", type=Path, required=True, help="dataset root")
    p_density.add_argument("--split", default="train")
    p_density.add_argument("--out", type=Path, required=True)
    p_density.add_argument("--sigma", type=float, default=4.0)
    p_density.add_argument("--kernel-mode", choices=("fixed", "adaptive"), default="fixed")
    p_density.add_argument("--stride", type=int, default=1)

    p_train = sub.add_parser("train", help="run the adaptation training loop")
    _add_config_flags(p_train)
    p_train.add_argument("--source", type=Path, required=True)
    p_train.add_argument("--target", type=Path, required=True)
    p_train.add_argument("--out", type=Path, required=True)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a labeled split")
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--split", default="test")

    p_scores = sub.add_parser("scores", help="export significance score maps as PNGs")
    p_scores.add_argument("--checkpoint", type=Path, required=True)
    p_scores.add_argument("--source", type=Path, required=True)
    p_scores.add_argument("--split", default="train")
    p_scores.add_argument("--out", type=Path, required=True)
    p_scores.add_argument("--limit", type=int, default=8)
    return parser


def _cmd_synth(args) -> int:
    spec = data.SynthSpec(
        image_size=args.size,
        count_range=(args.count_min, args.count_max),
        seed=args.seed,
    )
    _echo_config("synth", {**dataclasses.asdict(spec), "out": str(args.out)})
    for domain in ("source", "target"):
        root = args.out / domain
        data.synth_dataset(spec, args.n_train, domain, root, split="train")
        data.synth_dataset(spec, args.n_test, domain, root, split="test")
        logger.info("wrote %s: %d train / %d test", root, args.n_train, args.n_test)
    return 0


def _cmd_density(args) -> int:
    _echo_config("density", {k: str(v) for k, v in vars(args).items() if k != "command"})
    dataset = data.load_dataset(args.source, args.split)
    if len(dataset) == 0:
        raise ValueError(f"no images under {args.source}/{args.split}")
    kernel = KernelSpec(mode=args.kernel_mode, sigma=args.sigma)
    args.out.mkdir(parents=True, exist_ok=True)
    for sample in dataset:
        if sample.annotation is None:
            raise ValueError(f"sample {sample.name!r} has no annotation")
        dmap = points_to_density(sample.annotation, kernel)
        if args.stride > 1:
            dmap = downsample_count_preserving(dmap, args.stride)
        data.save_density(args.out / f"{sample.name}.den", dmap)
    logger.info("wrote %d density maps to %s", len(dataset), args.out)
    return 0


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    _echo_config(
        "train",
        {
            **dataclasses.asdict(config),
            "source": str(args.source),
            "target": str(args.target),
            "out": str(args.out),
        },
    )
    source = data.load_dataset(args.source, "train")
    target = data.load_dataset(args.target, "train")
    eval_ds = data.load_dataset(args.target, "test")
    result = training.train(
        config,
        source,
        target,
        args.out,
        eval_dataset=eval_ds if len(eval_ds) and eval_ds.has_annotations else None,
    )
    if result.final_metrics is not None:
        print(json.dumps(result.final_metrics))
    else:
        print(json.dumps({"steps": len(result.reports), "final_eval": None}))
    return 0


def _cmd_eval(args) -> int:
    _echo_config("eval", {k: str(v) for k, v in vars(args).items() if k != "command"})
    state = training.load_checkpoint(args.checkpoint)
    dataset = data.load_dataset(args.data, args.split)
    metrics = training.evaluate(state.generator, dataset, config=state.config)
    print(json.dumps(metrics))
    return 0


def _cmd_scores(args) -> int:
    _echo_config("scores", {k: str(v) for k, v in vars(args).items() if k != "command"})
    state = training.load_checkpoint(args.checkpoint)
    cfg = state.config
    dataset = data.load_dataset(args.source, args.split)
    if len(dataset) == 0:
        raise ValueError(f"no images under {args.source}/{args.split}")
    args.out.mkdir(parents=True, exist_ok=True)
    kernel = cfg.kernel_spec()
    for sample in list(dataset)[: args.limit]:
        image, _ = data.preprocess(sample, cfg.input_size, cfg.output_stride, kernel, rng=None)
        pred4, _ = state.generator.forward(image[None], need_cache=False)
        pred = pred4[:, 0]
        o1, _ = state.d1.forward(pred4, need_cache=False)
        views, _ = coarse.local_views(pred, cfg.s)
        vh, vw = views.shape[2], views.shape[3]
        o2, _ = state.d2.forward(views.reshape(-1, 1, vh, vw), need_cache=False)
        o2_maps = o2.reshape(1, cfg.s * cfg.s, o2.shape[2], o2.shape[3])
        scores = scoring.score_batch(o1[:, 0], o2_maps, pred.shape[1:], cfg.s, cfg.tau_img)
        h, w = pred.shape[1:]
        hp, wp = h // cfg.s, w // cfg.s
        maps = {
            "img": np.full((h, w), bool(scores.s_img[0])),
            "patch": reassemble_patches(
                np.broadcast_to(
                    scores.s_patch[0][:, None, None], (cfg.s * cfg.s, hp, wp)
                ),
                cfg.s,
            ),
            "pix": scores.s_pix[0],
            "ppx": scores.s_ppx[0],
        }
        for level, arr in maps.items():
            data.save_gray(args.out / f"{sample.name}_s_{level}.png", arr.astype(np.float64))
    logger.info("wrote score maps for %d images to %s", min(args.limit, len(dataset)), args.out)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "density": _cmd_density,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "scores": _cmd_scores,
}


def run(argv=None) -> int:
    """Parse arguments and execute one command; returns the exit status."""
    level = os.environ.get("ASNET_LOG", "info").lower()
    logging.basicConfig(level=logging.DEBUG if level == "debug" else logging.INFO)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
