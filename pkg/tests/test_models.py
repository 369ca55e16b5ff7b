"""Architecture definitions: shapes, parameter counts, patch splitting."""

import numpy as np
import pytest

from asnet.models import (
    DISCRIMINATOR_MIN_INPUT,
    Discriminator,
    Generator,
    discriminator_layers,
    generator_layers,
    output_shape,
    parameter_count,
    reassemble_patches,
    split_patches,
)

# closed-form totals from the layer tables, frozen once
VGG_GENERATOR_PARAMS = 16_042_689
FULL_DISCRIMINATOR_PARAMS = 2_762_689


def test_generator_parameter_count_matches_closed_form():
    specs = generator_layers("vgg16")
    total = parameter_count(specs, 3)
    # independent recomputation: conv params are k*k*cin*cout + cout
    chans = 3
    ref = 0
    for spec in specs:
        if spec.kind == "conv":
            kh, kw = spec.kernel
            ref += kh * kw * chans * spec.out_channels + spec.out_channels
            chans = spec.out_channels
    assert total == ref == VGG_GENERATOR_PARAMS
    gen = Generator("vgg16", rng=np.random.default_rng(0))
    built = sum(p.size for p in gen.net.parameters().values())
    assert built == total


def test_discriminator_parameter_count():
    specs = discriminator_layers("full")
    assert parameter_count(specs, 1) == FULL_DISCRIMINATOR_PARAMS
    d = Discriminator("full", rng=np.random.default_rng(1))
    assert sum(p.size for p in d.net.parameters().values()) == FULL_DISCRIMINATOR_PARAMS


def test_generator_output_shapes():
    specs = generator_layers("vgg16")
    assert output_shape(specs, 512, 512) == (32, 32)
    assert output_shape(specs, 256, 256) == (16, 16)
    toy = generator_layers("toy")
    assert output_shape(toy, 64, 64) == (16, 16)


def test_toy_generator_forward_shape_and_stride():
    gen = Generator("toy", rng=np.random.default_rng(2))
    assert gen.output_stride == 4
    x = np.random.default_rng(3).random((2, 3, 64, 64), dtype=np.float32)
    y, _ = gen.forward(x, need_cache=False)
    assert y.shape == (2, 1, 16, 16)
    assert np.isfinite(y).all()


def test_generator_rejects_non_divisible_input():
    gen = Generator("toy", rng=np.random.default_rng(4))
    with pytest.raises(ValueError):
        gen.forward(np.zeros((1, 3, 66, 64), dtype=np.float32))


def test_all_zero_input_with_zero_biases_gives_constant_output():
    gen = Generator("toy", rng=np.random.default_rng(5))
    x = np.zeros((1, 3, 32, 32), dtype=np.float32)
    y, _ = gen.forward(x, need_cache=False)
    assert y.min() == y.max()


def test_discriminator_output_size_recurrence_and_golden_shape():
    # derive the five-layer output size by the conv recurrence
    def recurrence(size):
        for _ in range(4):
            size = (size + 2 * 1 - 4) // 2 + 1
        return (size + 2 * 2 - 4) // 1 + 1

    specs = discriminator_layers("full")
    for size in (16, 32, 48, 64):
        assert output_shape(specs, size, size) == (recurrence(size), recurrence(size))
    # golden shape, frozen from the recurrence: 32 -> 16 -> 8 -> 4 -> 2 -> 3
    assert output_shape(specs, 32, 32) == (3, 3)
    d = Discriminator("full", rng=np.random.default_rng(6))
    o, _ = d.forward(np.random.default_rng(7).random((1, 1, 32, 32), dtype=np.float32))
    assert o.shape == (1, 1, 3, 3)


def test_discriminator_outputs_in_open_unit_interval():
    d = Discriminator("toy", rng=np.random.default_rng(8))
    x = np.random.default_rng(9).random((3, 1, 16, 16), dtype=np.float32)
    o, _ = d.forward(x, need_cache=False)
    assert o.shape[2:] == (2, 2)
    assert o.min() > 0.0
    assert o.max() < 1.0


def test_discriminator_rejects_small_input():
    d = Discriminator("toy", rng=np.random.default_rng(10))
    with pytest.raises(ValueError):
        d.forward(np.zeros((1, 1, DISCRIMINATOR_MIN_INPUT - 1, 16), dtype=np.float32))


def test_batch_independence_of_duplicated_inputs():
    d = Discriminator("toy", rng=np.random.default_rng(11))
    x = np.random.default_rng(12).random((1, 1, 16, 16), dtype=np.float32)
    dup = np.concatenate([x, x])
    o, _ = d.forward(dup, need_cache=False)
    np.testing.assert_array_equal(o[0], o[1])
    gen = Generator("toy", rng=np.random.default_rng(13))
    xi = np.random.default_rng(14).random((1, 3, 32, 32), dtype=np.float32)
    yi, _ = gen.forward(np.concatenate([xi, xi]), need_cache=False)
    np.testing.assert_array_equal(yi[0], yi[1])


def test_split_patches_examples():
    m = np.arange(16.0).reshape(4, 4)
    patches = split_patches(m, 2)
    assert patches.shape == (4, 2, 2)
    np.testing.assert_array_equal(patches[0], [[0, 1], [4, 5]])
    np.testing.assert_array_equal(patches[3], [[10, 11], [14, 15]])
    np.testing.assert_array_equal(reassemble_patches(patches, 2), m)
    np.testing.assert_array_equal(split_patches(m, 1)[0], m)
    big = np.random.default_rng(15).random((32, 32))
    assert split_patches(big, 4).shape == (16, 8, 8)


def test_split_reassemble_round_trip_random_shapes():
    rng = np.random.default_rng(16)
    for _ in range(25):
        s = int(rng.integers(1, 5))
        hp = int(rng.integers(1, 6))
        wp = int(rng.integers(1, 6))
        n = int(rng.integers(1, 4))
        maps = rng.random((n, s * hp, s * wp))
        round_tripped = reassemble_patches(split_patches(maps, s), s)
        np.testing.assert_array_equal(round_tripped, maps)


def test_split_patches_rejects_non_divisible():
    with pytest.raises(ValueError):
        split_patches(np.ones((5, 4)), 2)


def test_vgg_generator_full_scale_forward_shape():
    # one real forward at the reference input size; chunked conv keeps
    # memory bounded
    gen = Generator("vgg16", rng=np.random.default_rng(17))
    x = np.random.default_rng(18).random((1, 3, 512, 512), dtype=np.float32)
    y, _ = gen.forward(x, need_cache=False)
    assert y.shape == (1, 1, 32, 32)
    assert np.isfinite(y).all()
