"""Density-map generation: kernels, point rendering, count preservation."""

import numpy as np
import pytest

from asnet.density import (
    KernelSpec,
    PointAnnotation,
    downsample_count_preserving,
    gaussian_kernel,
    points_to_density,
)


def test_kernel_normalized_and_odd_side():
    k = gaussian_kernel(4.0, 4.0)
    assert k.shape == (33, 33)
    assert abs(k.sum() - 1.0) < 1e-9
    assert (k >= 0).all()


def test_kernel_tiny_sigma_concentrates_at_center():
    # direct summation oracle: evaluate the discretized Gaussian by hand
    sigma = 0.25
    half = int(np.ceil(4 * sigma))
    total = center = 0.0
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            v = np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
            total += v
            if dx == 0 and dy == 0:
                center = v
    assert center / total > 0.99
    k = gaussian_kernel(sigma, 4.0)
    assert k[k.shape[0] // 2, k.shape[1] // 2] > 0.99


def test_kernel_symmetry_exact():
    k = gaussian_kernel(4.0)
    assert np.array_equal(k, k[::-1, :])
    assert np.array_equal(k, k[:, ::-1])


def test_kernel_rejects_bad_sigma():
    with pytest.raises(ValueError):
        gaussian_kernel(0.0)
    with pytest.raises(ValueError):
        gaussian_kernel(-1.0)


def test_empty_annotation_gives_zero_map():
    ann = PointAnnotation(points=[], image_size=(32, 32))
    d = points_to_density(ann)
    assert d.shape == (32, 32)
    assert d.sum() == 0.0


def test_single_centered_point_has_unit_mass():
    ann = PointAnnotation(points=[(32.0, 32.0)], image_size=(64, 64))
    d = points_to_density(ann, KernelSpec(sigma=4.0))
    assert abs(d.sum() - 1.0) < 1e-6
    assert (d >= 0).all()


def test_corner_points_keep_unit_mass_each():
    # reference: accumulate each clipped window by explicit loops and
    # renormalize it, independent of the vectorized implementation
    pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.0, 2.0), (0.0, 2.0)]
    ann = PointAnnotation(points=pts, image_size=(40, 40))
    spec = KernelSpec(sigma=4.0)
    d = points_to_density(ann, spec)
    assert abs(d.sum() - 5.0) < 5e-6

    k = gaussian_kernel(spec.sigma, spec.truncation_radius)
    half = k.shape[0] // 2
    ref = np.zeros((40, 40))
    for x, y in pts:
        cx, cy = int(round(x)), int(round(y))
        window = []
        for yy in range(40):
            for xx in range(40):
                if abs(yy - cy) <= half and abs(xx - cx) <= half:
                    window.append((yy, xx, k[yy - cy + half, xx - cx + half]))
        wsum = sum(v for _, _, v in window)
        for yy, xx, v in window:
            ref[yy, xx] += v / wsum
    np.testing.assert_allclose(d, ref, atol=1e-12)


def test_point_outside_image_is_rejected_with_index():
    ann = PointAnnotation(points=[(1.0, 1.0), (64.0, 5.0)], image_size=(64, 64))
    with pytest.raises(ValueError, match="point 1"):
        points_to_density(ann)


def test_count_preservation_over_random_annotations():
    rng = np.random.default_rng(7)
    for _ in range(100):
        h = int(rng.integers(64, 257))
        w = int(rng.integers(64, 257))
        n = int(rng.integers(0, 51))
        pts = np.column_stack([rng.uniform(0, w - 1e-3, n), rng.uniform(0, h - 1e-3, n)])
        ann = PointAnnotation(points=pts.tolist(), image_size=(h, w))
        d = points_to_density(ann, KernelSpec(sigma=3.0))
        assert abs(d.sum() - n) < 1e-3 * max(n, 1)


def test_adaptive_mode_count_preserved_and_sigma_varies():
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(0, 99, 20), rng.uniform(0, 99, 20)])
    ann = PointAnnotation(points=pts.tolist(), image_size=(100, 100))
    d = points_to_density(ann, KernelSpec(mode="adaptive", sigma=4.0))
    assert abs(d.sum() - 20) < 1e-3 * 20


def test_permutation_invariance_within_tolerance():
    rng = np.random.default_rng(11)
    pts = np.column_stack([rng.uniform(0, 63, 12), rng.uniform(0, 63, 12)]).tolist()
    ann_a = PointAnnotation(points=pts, image_size=(64, 64))
    ann_b = PointAnnotation(points=pts[::-1], image_size=(64, 64))
    da = points_to_density(ann_a)
    db = points_to_density(ann_b)
    np.testing.assert_allclose(da, db, atol=1e-9)


def test_downsample_block_sum_examples():
    ones = np.ones((4, 4))
    out = downsample_count_preserving(ones, 2)
    np.testing.assert_array_equal(out, np.full((2, 2), 4.0))
    arr = np.arange(16.0).reshape(4, 4)
    np.testing.assert_array_equal(downsample_count_preserving(arr, 1), arr)


def test_downsample_matches_nested_loop_reference():
    rng = np.random.default_rng(5)
    m = rng.random((32, 32))
    out = downsample_count_preserving(m, 16)
    ref = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            for a in range(16):
                for b in range(16):
                    ref[i, j] += m[i * 16 + a, j * 16 + b]
    np.testing.assert_allclose(out, ref, rtol=1e-12)
    assert abs(out.sum() - m.sum()) <= 1e-12 * m.sum()


@pytest.mark.parametrize("factor", [1, 2, 4, 8, 16])
def test_downsample_mass_exact_all_factors(factor):
    rng = np.random.default_rng(factor)
    m = rng.random((64, 64))
    out = downsample_count_preserving(m, factor)
    assert out.shape == (64 // factor, 64 // factor)
    np.testing.assert_allclose(out.sum(), m.sum(), rtol=1e-12)


def test_downsample_rejects_non_divisible():
    with pytest.raises(ValueError):
        downsample_count_preserving(np.ones((6, 6)), 4)
