"""Density losses: plain Euclidean, score-weighted, and the total objective.

The weighted loss multiplies each squared pixel error by four factors, one
per score level. With the residual form each factor is (1 + W), so an
all-zero score set reproduces the plain loss and an all-one set scales it by
16; with ``residual=False`` the bare W factors are used instead, which drops
every pixel not selected at all four levels. Scores are constants: gradients
flow only through the predicted maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scoring import ScoreSet


@dataclass(frozen=True)
class LossReport:
    """Generator-side loss components for one step."""

    l_den: float
    l_dens: float
    l_adv1: float
    l_adv2: float
    l_total: float

    @property
    def all_finite(self) -> bool:
        return all(
            math.isfinite(v)
            for v in (self.l_den, self.l_dens, self.l_adv1, self.l_adv2, self.l_total)
        )

    def as_dict(self) -> dict[str, float]:
        return {
            "l_den": self.l_den,
            "l_dens": self.l_dens,
            "l_adv1": self.l_adv1,
            "l_adv2": self.l_adv2,
            "l_total": self.l_total,
        }


def _check_batch_pair(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if pred.ndim != 3:
        raise ValueError(f"expected (N, h, w) batches, got shape {pred.shape}")
    return pred, gt


def density_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Per-batch sum of squared pixel errors, averaged over images."""
    pred, gt = _check_batch_pair(pred, gt)
    n_b = pred.shape[0]
    diff = pred - gt
    return float(np.square(diff).sum() / n_b)


def density_loss_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred, gt = _check_batch_pair(pred, gt)
    return 2.0 * (pred - gt) / pred.shape[0]


def score_weight_map(
    scores: ScoreSet, s: int, shape: tuple[int, int, int], residual: bool = True
) -> np.ndarray:
    """Combined per-pixel weight from the four score levels.

    The image factor broadcasts over the map, the patch factor over its
    patch's pixels; pixel and patch-pixel factors are already per pixel.
    """
    n, h, w = shape
    if h % s or w % s:
        raise ValueError(f"maps of size {h}x{w} do not split into {s}x{s} patches")
    if scores.s_img.shape != (n,) or scores.s_patch.shape != (n, s * s):
        raise ValueError("image/patch score shapes do not match the batch")
    if scores.s_pix.shape != (n, h, w) or scores.s_ppx.shape != (n, h, w):
        raise ValueError("pixel score shapes do not match the density maps")

    hp, wp = h // s, w // s

    def factor(arr):
        arr = arr.astype(np.float64)
        return 1.0 + arr if residual else arr

    w_img = factor(scores.s_img)[:, None, None]
    # expand (N, s*s) patch scores onto the pixel grid, row-major patches
    patch_grid = scores.s_patch.reshape(n, s, s)
    w_patch = factor(patch_grid.repeat(hp, axis=1).repeat(wp, axis=2))
    return w_img * w_patch * factor(scores.s_pix) * factor(scores.s_ppx)


def weighted_density_loss(
    pred: np.ndarray,
    gt: np.ndarray,
    scores: ScoreSet,
    s: int,
    residual: bool = True,
) -> float:
    """Score-weighted Euclidean density loss over a source batch."""
    pred, gt = _check_batch_pair(pred, gt)
    weight = score_weight_map(scores, s, pred.shape, residual=residual)
    return float((weight * np.square(pred - gt)).sum() / pred.shape[0])


def weighted_density_loss_grad(
    pred: np.ndarray,
    gt: np.ndarray,
    scores: ScoreSet,
    s: int,
    residual: bool = True,
) -> np.ndarray:
    pred, gt = _check_batch_pair(pred, gt)
    weight = score_weight_map(scores, s, pred.shape, residual=residual)
    return 2.0 * weight * (pred - gt) / pred.shape[0]


def total_generator_loss(
    l_dens: float, l_adv1: float, l_adv2: float, lambda1: float, lambda2: float
) -> float:
    """Weighted sum of the generator's loss components."""
    for name, value in (("l_dens", l_dens), ("l_adv1", l_adv1), ("l_adv2", l_adv2)):
        if not math.isfinite(value):
            raise ValueError(f"non-finite loss component {name}: {value}")
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be nonnegative")
    return float(l_dens + lambda1 * l_adv1 + lambda2 * l_adv2)
