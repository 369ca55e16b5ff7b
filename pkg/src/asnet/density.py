"""Ground-truth density maps from point annotations.

A density map is a plain 2-D float array whose entries are nonnegative and
whose sum equals the annotated object count. Each annotated point deposits a
normalized Gaussian kernel; kernels clipped at the image border are
renormalized per point so no mass is lost. Targets at the network's output
stride are produced by block-sum downsampling, which preserves counts exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class PointAnnotation:
    """Head/object coordinates for one image.

    ``points`` are (x, y) pixel positions, x rightward and y downward,
    origin top-left. ``image_size`` is (height, width).
    """

    points: tuple[tuple[float, float], ...]
    image_size: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    @property
    def count(self) -> int:
        return len(self.points)

    def validate(self) -> None:
        """Raise ValueError naming the first point outside [0, W) x [0, H)."""
        h, w = self.image_size
        for i, (x, y) in enumerate(self.points):
            if not (0.0 <= x < w and 0.0 <= y < h):
                raise ValueError(
                    f"point {i} at ({x}, {y}) lies outside image of size {h}x{w}"
                )


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel parameters for density-map generation.

    ``mode`` selects a fixed sigma or the geometry-adaptive rule
    sigma = beta * (mean distance to the k nearest annotated neighbors),
    the usual choice for dense scenes. Isolated points (fewer than two
    points in the image) fall back to the fixed sigma.
    """

    mode: str = "fixed"  # "fixed" | "adaptive"
    sigma: float = 4.0
    k_neighbors: int = 3
    beta: float = 0.3
    truncation_radius: float = 4.0  # in multiples of sigma

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.truncation_radius < 2:
            raise ValueError(f"truncation_radius must be >= 2, got {self.truncation_radius}")


def gaussian_kernel(sigma: float, truncation_radius: float = 4.0) -> np.ndarray:
    """Discretized isotropic Gaussian, normalized to sum exactly 1.

    Returns a square array of odd side 2*ceil(truncation_radius*sigma) + 1.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    half = int(math.ceil(truncation_radius * sigma))
    ax = np.arange(-half, half + 1, dtype=np.float64)
    sq = ax[:, None] ** 2 + ax[None, :] ** 2
    kernel = np.exp(-sq / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _adaptive_sigmas(ann: PointAnnotation, spec: KernelSpec) -> np.ndarray:
    pts = np.asarray(ann.points, dtype=np.float64)
    n = len(pts)
    sigmas = np.full(n, spec.sigma, dtype=np.float64)
    if n < 2:
        return sigmas
    k = min(spec.k_neighbors, n - 1)
    tree = cKDTree(pts)
    # query includes the point itself at distance 0; drop that column
    dists, _ = tree.query(pts, k=k + 1)
    sigmas = spec.beta * dists[:, 1:].mean(axis=1)
    return np.maximum(sigmas, 1e-3)


def points_to_density(ann: PointAnnotation, spec: KernelSpec | None = None) -> np.ndarray:
    """Render the annotation into an image-sized density map.

    Each point contributes total mass exactly 1: the kernel window is clipped
    to the image and renormalized per point, so the map sums to the point
    count regardless of border effects.
    """
    if spec is None:
        spec = KernelSpec()
    ann.validate()
    h, w = ann.image_size
    density = np.zeros((h, w), dtype=np.float64)
    if ann.count == 0:
        return density

    if spec.mode == "adaptive":
        sigmas = _adaptive_sigmas(ann, spec)
    else:
        sigmas = np.full(ann.count, spec.sigma, dtype=np.float64)

    kernel_cache: dict[float, np.ndarray] = {}
    for (x, y), sigma in zip(ann.points, sigmas):
        sigma = float(sigma)
        kernel = kernel_cache.get(sigma)
        if kernel is None:
            kernel = gaussian_kernel(sigma, spec.truncation_radius)
            kernel_cache[sigma] = kernel
        half = kernel.shape[0] // 2
        cx = min(int(round(x)), w - 1)
        cy = min(int(round(y)), h - 1)
        y0, y1 = max(0, cy - half), min(h, cy + half + 1)
        x0, x1 = max(0, cx - half), min(w, cx + half + 1)
        window = kernel[y0 - cy + half : y1 - cy + half, x0 - cx + half : x1 - cx + half]
        density[y0:y1, x0:x1] += window / window.sum()
    return density


def downsample_count_preserving(density: np.ndarray, factor: int) -> np.ndarray:
    """Sum-pool by ``factor`` so the total count is preserved exactly."""
    density = np.asarray(density)
    if density.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {density.shape}")
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = density.shape
    if h % factor or w % factor:
        raise ValueError(f"map of size {h}x{w} is not divisible by factor {factor}")
    return density.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
