"""Significance scores against independent plain-loop references."""

from fractions import Fraction

import numpy as np
import pytest

from asnet.models import reassemble_patches
from asnet.scoring import (
    image_score,
    nearest_upsample,
    patch_pixel_score,
    patch_score,
    pixel_score,
    score_batch,
)


def loop_image_score(o, tau=0.5):
    total = 0.0
    count = 0
    for v in np.asarray(o).ravel():
        total += v
        count += 1
    return 1 if total / count < tau else 0


def loop_pixel_score(o, out_shape):
    # exact rational arithmetic: the reference mean has no rounding noise,
    # so ties resolve by true value rather than by summation order
    o = np.asarray(o)
    h, w = o.shape
    oh, ow = out_shape
    up = [[Fraction(float(o[(i * h) // oh, (j * w) // ow])) for j in range(ow)] for i in range(oh)]
    total = Fraction(0)
    for row in up:
        for v in row:
            total += v
    mean = total / (oh * ow)
    out = np.zeros((oh, ow), dtype=bool)
    for i in range(oh):
        for j in range(ow):
            out[i, j] = up[i][j] < mean
    return out


def test_image_score_examples():
    assert image_score(np.array([[0.2, 0.4], [0.6, 0.4]])) == 1
    assert image_score(np.full((3, 3), 0.9)) == 0
    assert image_score(np.full((2, 2), 0.5)) == 0  # tie scores 0 (strict <)


def test_image_score_empty_map_rejected():
    with pytest.raises(ValueError):
        image_score(np.zeros((0, 2)))


def test_pixel_score_hand_instance():
    o = np.array([[0.2, 0.6], [0.4, 0.8]])
    out = pixel_score(o, (4, 4))
    expected = np.zeros((4, 4), dtype=bool)
    expected[:2, :2] = True  # 0.2 block
    expected[2:, :2] = True  # 0.4 block
    np.testing.assert_array_equal(out, expected)


def test_pixel_score_constant_map_all_zero():
    assert not pixel_score(np.full((2, 2), 0.7), (8, 8)).any()


def test_pixel_score_identity_shape_is_pure_soft_threshold():
    rng = np.random.default_rng(0)
    o = rng.uniform(0, 1, (5, 5))
    np.testing.assert_array_equal(pixel_score(o, (5, 5)), o < o.mean())


def test_pixel_score_block_constant():
    rng = np.random.default_rng(1)
    o = rng.uniform(0, 1, (3, 3))
    out = pixel_score(o, (9, 9))
    for i in range(3):
        for j in range(3):
            block = out[3 * i : 3 * i + 3, 3 * j : 3 * j + 3]
            assert block.min() == block.max()


def test_nearest_upsample_non_integer_ratio_floor_mapping():
    o = np.array([[1.0, 2.0, 3.0]])
    up = nearest_upsample(o, (1, 5))
    np.testing.assert_array_equal(up, [[1.0, 1.0, 2.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        nearest_upsample(np.ones((4, 4)), (2, 2))


def test_patch_score_examples_and_loop_reference():
    assert patch_score(np.full((1, 2, 2), 0.3))[0]
    assert not patch_score(np.full((1, 2, 2), 0.7))[0]
    rng = np.random.default_rng(2)
    patches = rng.uniform(0, 1, (4, 3, 3))
    out = patch_score(patches)
    for j in range(4):
        assert out[j] == loop_image_score(patches[j])


def test_patch_pixel_score_constant_patch_all_zero():
    assert not patch_pixel_score(np.full((1, 2, 2), 0.4), (4, 4)).any()


def test_patch_pixel_thresholds_are_per_patch():
    # two patches with disjoint ranges: a value below the global mean but
    # above its own patch mean must score 0
    low = np.array([[0.10, 0.12], [0.14, 0.16]])  # patch mean 0.13
    high = np.array([[0.80, 0.82], [0.84, 0.86]])  # patch mean 0.83
    patches = np.stack([low, high])
    out = patch_pixel_score(patches, (2, 2))
    # 0.14 and 0.16 are far below the global mean (0.48) but only 0.10/0.12
    # fall under the patch mean
    np.testing.assert_array_equal(out[0], [[True, True], [False, False]])
    np.testing.assert_array_equal(out[1], [[True, True], [False, False]])
    for j, patch in enumerate(patches):
        np.testing.assert_array_equal(out[j], loop_pixel_score(patch, (2, 2)))


def test_patch_pixel_s1_equals_pixel_score():
    rng = np.random.default_rng(3)
    o = rng.uniform(0, 1, (1, 4, 4))
    np.testing.assert_array_equal(patch_pixel_score(o, (8, 8))[0], pixel_score(o[0], (8, 8)))


def test_scores_match_loop_references_on_random_maps():
    rng = np.random.default_rng(4)
    for trial in range(200):
        if trial % 10 == 0:
            o1 = np.full((2, 2), float(rng.uniform(0, 1)))  # uniform / tie cases
        else:
            o1 = rng.uniform(0, 1, (2, 2))
        if trial % 17 == 0:
            o1[0, 0] = o1[1, 1]  # force a duplicated value
        assert image_score(o1) == loop_image_score(o1)
        np.testing.assert_array_equal(pixel_score(o1, (8, 8)), loop_pixel_score(o1, (8, 8)))
        patches = rng.uniform(0, 1, (4, 2, 2))
        out_patch = patch_score(patches)
        out_ppx = patch_pixel_score(patches, (4, 4))
        for j in range(4):
            assert out_patch[j] == loop_image_score(patches[j])
            np.testing.assert_array_equal(out_ppx[j], loop_pixel_score(patches[j], (4, 4)))


def test_constant_shift_invariance_split():
    # adding a constant leaves the soft-threshold scores unchanged but can
    # flip the fixed-threshold ones
    rng = np.random.default_rng(5)
    o1 = rng.uniform(0.3, 0.45, (2, 2))
    shift = 0.2
    np.testing.assert_array_equal(pixel_score(o1, (4, 4)), pixel_score(o1 + shift, (4, 4)))
    patches = rng.uniform(0.3, 0.45, (4, 2, 2))
    np.testing.assert_array_equal(
        patch_pixel_score(patches, (4, 4)), patch_pixel_score(patches + shift, (4, 4))
    )
    assert image_score(o1) == 1
    assert image_score(o1 + shift) == 0  # mean crossed the threshold
    assert patch_score(patches).all()
    assert not patch_score(patches + shift).any()


def test_score_batch_assembles_full_resolution_maps():
    rng = np.random.default_rng(6)
    n, s, h, w = 3, 2, 8, 8
    o1 = rng.uniform(0, 1, (n, 2, 2))
    o2 = rng.uniform(0, 1, (n, s * s, 2, 2))
    scores = score_batch(o1, o2, (h, w), s)
    assert scores.s_img.shape == (n,)
    assert scores.s_patch.shape == (n, s * s)
    assert scores.s_pix.shape == (n, h, w)
    assert scores.s_ppx.shape == (n, h, w)
    for arr in (scores.s_img, scores.s_patch, scores.s_pix, scores.s_ppx):
        assert arr.dtype == bool
    # the assembled patch-pixel map equals per-patch scoring put back in place
    for i in range(n):
        per_patch = patch_pixel_score(o2[i], (h // s, w // s))
        np.testing.assert_array_equal(scores.s_ppx[i], reassemble_patches(per_patch, s))
    stats = scores.stats()
    assert set(stats) == {"img", "patch", "pix", "ppx"}
