"""Counting error metrics: MAE, root MSE, and grid-average error (GAME).

MAE and MSE compare per-image total counts; MSE is reported in root form.
GAME(L) splits each map into a 2^L x 2^L grid of (near-)equal regions and
sums absolute per-region count errors, so GAME(0) reduces to the MAE summand
and refining the grid can never decrease the error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CountRecord:
    """Predicted and ground-truth count for one image."""

    predicted: float
    actual: float


def mae_mse(records) -> tuple[float, float]:
    """Mean absolute error and root mean squared error over count records."""
    records = list(records)
    if not records:
        raise ValueError("no count records to aggregate")
    diffs = np.array([r.predicted - r.actual for r in records], dtype=np.float64)
    mae = float(np.abs(diffs).mean())
    mse = float(np.sqrt(np.square(diffs).mean()))
    return mae, mse


def _grid_edges(dim: int, cells: int) -> np.ndarray:
    # floor(i * dim / cells) boundaries; nested across levels since doubling
    # the cell count keeps every existing edge
    return (np.arange(cells + 1) * dim) // cells


def game(pred_map: np.ndarray, gt_map: np.ndarray, level: int) -> float:
    """Per-image GAME(L) contribution: sum of |count error| over 4^L regions."""
    pred_map = np.asarray(pred_map, dtype=np.float64)
    gt_map = np.asarray(gt_map, dtype=np.float64)
    if pred_map.shape != gt_map.shape:
        raise ValueError(f"map shapes differ: {pred_map.shape} vs {gt_map.shape}")
    if pred_map.ndim != 2:
        raise ValueError(f"expected 2-D maps, got shape {pred_map.shape}")
    level = int(level)
    if level < 0:
        raise ValueError(f"GAME level must be >= 0, got {level}")
    cells = 2**level
    h, w = pred_map.shape
    rows = _grid_edges(h, cells)
    cols = _grid_edges(w, cells)
    total = 0.0
    for i in range(cells):
        for j in range(cells):
            pr = pred_map[rows[i] : rows[i + 1], cols[j] : cols[j + 1]].sum()
            gr = gt_map[rows[i] : rows[i + 1], cols[j] : cols[j + 1]].sum()
            total += abs(pr - gr)
    return float(total)


def apply_roi(density: np.ndarray, roi: np.ndarray) -> np.ndarray:
    """Zero all density outside the region-of-interest mask."""
    density = np.asarray(density)
    roi = np.asarray(roi)
    if roi.shape != density.shape:
        raise ValueError(f"ROI shape {roi.shape} != map shape {density.shape}")
    if not np.isin(roi, (0, 1)).all():
        raise ValueError("ROI mask must be binary")
    return density * roi.astype(density.dtype)
