"""Adversarial alignment losses over discriminator outputs.

The discriminators classify density maps as source (label 1) or target
(label 0) with standard binary cross-entropy; the generator's adversarial
loss is the non-saturating pairing, computed on target maps only. Losses and
their gradients with respect to the discrimination maps are explicit, so the
training loop can route them through the network backward passes.

Log arguments are floored at ``LOG_FLOOR`` to keep saturated sigmoids finite;
the gradient is zero where the floor is active.
"""

from __future__ import annotations

import math

import numpy as np

from .models import DISCRIMINATOR_MIN_INPUT, reassemble_patches, split_patches

LOG_FLOOR = 1e-7


def _check_open_unit(o: np.ndarray, name: str) -> np.ndarray:
    o = np.asarray(o)
    if o.size == 0:
        raise ValueError(f"{name} is empty")
    if o.min() <= 0.0 or o.max() >= 1.0:
        raise ValueError(f"{name} has values outside the open interval (0, 1)")
    return o


def discriminator_loss(o_source: np.ndarray, o_target: np.ndarray) -> float:
    """Binary cross-entropy of one discriminator over a source/target batch.

    Both inputs carry the batch on the first axis; all remaining axes
    (patch index, spatial) are summed. Normalization is by batch size only.
    """
    o_source = _check_open_unit(o_source, "o_source")
    o_target = _check_open_unit(o_target, "o_target")
    if o_source.shape[0] != o_target.shape[0]:
        raise ValueError(
            f"batch sizes differ: {o_source.shape[0]} vs {o_target.shape[0]}"
        )
    n_b = o_source.shape[0]
    total = np.log(np.maximum(o_source, LOG_FLOOR)).sum()
    total += np.log(np.maximum(1.0 - o_target, LOG_FLOOR)).sum()
    return float(-total / n_b)


def discriminator_loss_grads(o_source, o_target):
    """Gradients of :func:`discriminator_loss` w.r.t. both discrimination maps."""
    o_source = np.asarray(o_source)
    o_target = np.asarray(o_target)
    n_b = o_source.shape[0]
    d_src = np.where(o_source > LOG_FLOOR, -1.0 / (n_b * o_source), 0.0)
    omt = 1.0 - o_target
    d_tgt = np.where(omt > LOG_FLOOR, 1.0 / (n_b * omt), 0.0)
    return d_src, d_tgt


def adversarial_loss(o_target: np.ndarray) -> float:
    """Generator loss pushing target discrimination maps toward 1 (source-like)."""
    o_target = _check_open_unit(o_target, "o_target")
    n_b = o_target.shape[0]
    return float(-np.log(np.maximum(o_target, LOG_FLOOR)).sum() / n_b)


def adversarial_loss_grad(o_target: np.ndarray) -> np.ndarray:
    o_target = np.asarray(o_target)
    n_b = o_target.shape[0]
    return np.where(o_target > LOG_FLOOR, -1.0 / (n_b * o_target), 0.0)


def local_views(density_batch: np.ndarray, s: int, min_size: int = DISCRIMINATOR_MIN_INPUT):
    """Per-patch local discriminator inputs for a density-map batch.

    Splits each (N, h, w) map into an s x s row-major grid. Patches smaller
    than ``min_size`` are nearest-upsampled by the smallest integer factor
    that makes them viable discriminator inputs; both domains pass through
    the identical transform, so the classification task is unchanged.

    Returns ``(views, factor)`` where views has shape (N, s*s, hp*f, wp*f).
    """
    density_batch = np.asarray(density_batch)
    if density_batch.ndim != 3:
        raise ValueError(f"expected (N, h, w) maps, got shape {density_batch.shape}")
    patches = split_patches(density_batch, s)
    hp, wp = patches.shape[2], patches.shape[3]
    factor = max(1, math.ceil(min_size / hp), math.ceil(min_size / wp))
    if factor > 1:
        patches = patches.repeat(factor, axis=2).repeat(factor, axis=3)
    return patches, factor


def local_views_backward(dviews: np.ndarray, factor: int, s: int) -> np.ndarray:
    """Map gradients on local views back onto the full density-map batch."""
    n, ss, hf, wf = dviews.shape
    if ss != s * s:
        raise ValueError(f"expected {s * s} patches, got {ss}")
    if hf % factor or wf % factor:
        raise ValueError("view size is not a multiple of the upsample factor")
    hp, wp = hf // factor, wf // factor
    if factor > 1:
        dviews = dviews.reshape(n, ss, hp, factor, wp, factor).sum(axis=(3, 5))
    return reassemble_patches(dviews, s)
