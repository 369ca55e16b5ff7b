"""Significance scores for source samples, derived from discriminator outputs.

Four binary score levels, coarse to fine:

* image: 1 when the mean global discrimination map falls below a fixed
  threshold (the image already looks target-like),
* patch: the same rule applied to each local discrimination map,
* pixel: the global map nearest-upsampled to density resolution and
  soft-thresholded at its own mean,
* patch-pixel: the soft threshold applied per patch, each patch against its
  own mean.

Scores are plain boolean arrays: they never carry gradients, and strict
inequality means exact ties score 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import reassemble_patches

DEFAULT_TAU_IMG = 0.5


@dataclass(frozen=True)
class ScoreSet:
    """Batched scores for one source minibatch.

    ``s_img`` is (N,), ``s_patch`` is (N, s*s) in row-major patch order,
    ``s_pix`` and ``s_ppx`` are (N, h, w) at density-map resolution.
    """

    s_img: np.ndarray
    s_patch: np.ndarray
    s_pix: np.ndarray
    s_ppx: np.ndarray

    def stats(self) -> dict[str, float]:
        """Fraction of ones at each level, for step logging."""
        return {
            "img": float(np.mean(self.s_img)),
            "patch": float(np.mean(self.s_patch)),
            "pix": float(np.mean(self.s_pix)),
            "ppx": float(np.mean(self.s_ppx)),
        }


def nearest_upsample(arr: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor upsample of a 2-D array to ``out_shape``.

    Integer ratios reproduce exact block replication; other ratios use the
    standard floor index mapping (needed because the discriminator's final
    stride-1 layer makes its output one cell wider than a power-of-two
    reduction, so density sizes are rarely exact multiples).
    """
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    h, w = arr.shape
    oh, ow = int(out_shape[0]), int(out_shape[1])
    if oh < h or ow < w:
        raise ValueError(f"cannot upsample {h}x{w} down to {oh}x{ow}")
    rows = (np.arange(oh) * h) // oh
    cols = (np.arange(ow) * w) // ow
    return arr[np.ix_(rows, cols)]


def image_score(o1_source: np.ndarray, tau: float = DEFAULT_TAU_IMG) -> bool:
    """1 when the spatial mean of the global map is strictly below ``tau``."""
    o1_source = np.asarray(o1_source)
    if o1_source.size == 0:
        raise ValueError("empty discrimination map")
    return bool(o1_source.mean() < tau)


def pixel_score(o1_source: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Upsample the global map to density resolution, threshold at its mean."""
    up = nearest_upsample(o1_source, out_shape)
    if up.min() == up.max():
        # a constant map has nothing strictly below its mean; guard against
        # summation round-off pushing the computed mean a few ulp off
        return np.zeros(up.shape, dtype=bool)
    return up < up.mean()


def patch_score(o2_source: np.ndarray, tau: float = DEFAULT_TAU_IMG) -> np.ndarray:
    """Image-level rule per patch: (s*s,) booleans from (s*s, H2, W2) maps."""
    o2_source = np.asarray(o2_source)
    if o2_source.ndim != 3 or o2_source.size == 0:
        raise ValueError(f"expected non-empty (patches, H2, W2) maps, got {o2_source.shape}")
    return o2_source.mean(axis=(1, 2)) < tau


def patch_pixel_score(o2_source: np.ndarray, patch_out_shape: tuple[int, int]) -> np.ndarray:
    """Soft threshold per patch, each against its own mean.

    Returns (s*s, hp, wp) booleans, one binary map per patch at the patch's
    density resolution.
    """
    o2_source = np.asarray(o2_source)
    if o2_source.ndim != 3 or o2_source.size == 0:
        raise ValueError(f"expected non-empty (patches, H2, W2) maps, got {o2_source.shape}")
    return np.stack([pixel_score(patch, patch_out_shape) for patch in o2_source])


def score_batch(
    o1_source: np.ndarray,
    o2_source: np.ndarray,
    density_shape: tuple[int, int],
    s: int,
    tau: float = DEFAULT_TAU_IMG,
) -> ScoreSet:
    """All four score levels for a source minibatch.

    ``o1_source`` is (N, H1, W1); ``o2_source`` is (N, s*s, H2, W2) in the
    patch order of :func:`asnet.coarse.local_views`. The patch-pixel maps are
    reassembled onto the full density grid.
    """
    o1_source = np.asarray(o1_source)
    o2_source = np.asarray(o2_source)
    h, w = density_shape
    if h % s or w % s:
        raise ValueError(f"density shape {h}x{w} is not divisible into {s}x{s} patches")
    patch_shape = (h // s, w // s)
    s_img = np.array([image_score(o1, tau) for o1 in o1_source])
    s_patch = np.stack([patch_score(o2, tau) for o2 in o2_source])
    s_pix = np.stack([pixel_score(o1, density_shape) for o1 in o1_source])
    s_ppx = np.stack(
        [reassemble_patches(patch_pixel_score(o2, patch_shape), s) for o2 in o2_source]
    )
    return ScoreSet(s_img=s_img, s_patch=s_patch, s_pix=s_pix, s_ppx=s_ppx)
