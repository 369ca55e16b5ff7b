"""Layer engine: finite-difference gradient checks and forward semantics."""

import numpy as np
import pytest

from asnet.nn import Conv2d, MaxPool2d, NearestUpsample, Sequential, _CHUNK_ELEMS


def numeric_param_grads(net, x, proj, eps=1e-6):
    """Central finite differences of sum(proj * net(x)) for every parameter."""
    grads = {}
    for name, param in net.parameters().items():
        g = np.zeros_like(param)
        flat = param.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            up, _ = net.forward(x, need_cache=False)
            flat[k] = old - eps
            down, _ = net.forward(x, need_cache=False)
            flat[k] = old
            gflat[k] = float(((up - down) * proj).sum()) / (2 * eps)
        grads[name] = g
    return grads


def analytic_grads(net, x, proj):
    y, caches = net.forward(x)
    net.zero_grad()
    dx = net.backward(proj.astype(x.dtype), caches)
    return y, dx, {k: v.copy() for k, v in net.gradients().items()}


def check_net(net, x, rtol=1e-6, atol=1e-8):
    rng = np.random.default_rng(123)
    y, _ = net.forward(x, need_cache=False)
    proj = rng.normal(size=y.shape)
    _, dx, grads = analytic_grads(net, x, proj)
    # input gradient via finite differences on a sample of entries
    eps = 1e-6
    flat = x.reshape(-1)
    for k in rng.choice(flat.size, size=min(20, flat.size), replace=False):
        old = flat[k]
        flat[k] = old + eps
        up, _ = net.forward(x, need_cache=False)
        flat[k] = old - eps
        down, _ = net.forward(x, need_cache=False)
        flat[k] = old
        fd = float(((up - down) * proj).sum()) / (2 * eps)
        assert dx.reshape(-1)[k] == pytest.approx(fd, rel=1e-5, abs=1e-7)
    for name, ref in numeric_param_grads(net, x, proj).items():
        np.testing.assert_allclose(grads[name], ref, rtol=rtol, atol=atol)


@pytest.mark.parametrize("activation", ["none", "relu", "leaky-relu", "sigmoid"])
def test_conv_gradients(activation):
    rng = np.random.default_rng(0)
    net = Sequential([Conv2d(2, 3, 3, padding=1, activation=activation, rng=rng, dtype=np.float64)])
    x = np.random.default_rng(1).normal(size=(2, 2, 5, 6))
    check_net(net, x)


def test_conv_stride_and_dilation_gradients():
    rng = np.random.default_rng(2)
    net = Sequential(
        [
            Conv2d(1, 2, 4, stride=2, padding=1, activation="leaky-relu", rng=rng, dtype=np.float64),
            Conv2d(2, 2, 3, padding=2, dilation=2, activation="relu", rng=rng, dtype=np.float64),
        ]
    )
    x = np.random.default_rng(3).normal(size=(1, 1, 8, 8))
    check_net(net, x)


def test_pool_and_upsample_gradients():
    rng = np.random.default_rng(4)
    net = Sequential(
        [
            Conv2d(1, 2, 3, padding=1, activation="relu", rng=rng, dtype=np.float64),
            MaxPool2d(),
            NearestUpsample(2),
            Conv2d(2, 1, 3, padding=1, rng=rng, dtype=np.float64),
        ]
    )
    x = np.random.default_rng(5).normal(size=(2, 1, 6, 6))
    check_net(net, x)


def test_conv_output_matches_direct_convolution():
    # nested-loop reference for one dilated conv
    rng = np.random.default_rng(6)
    conv = Conv2d(2, 1, 3, padding=2, dilation=2, rng=rng, dtype=np.float64)
    x = rng.normal(size=(1, 2, 7, 7))
    y, _ = conv.forward(x, need_cache=False)
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)))
    ref = np.zeros_like(y)
    for i in range(y.shape[2]):
        for j in range(y.shape[3]):
            acc = conv.b[0]
            for c in range(2):
                for a in range(3):
                    for b in range(3):
                        acc += conv.w[0, c, a, b] * xp[0, c, i + 2 * a, j + 2 * b]
            ref[0, 0, i, j] = acc
    np.testing.assert_allclose(y, ref, rtol=1e-12)


def test_chunked_forward_equals_unchunked(monkeypatch):
    rng = np.random.default_rng(7)
    conv = Conv2d(3, 4, 3, padding=1, activation="relu", rng=rng, dtype=np.float64)
    x = rng.normal(size=(1, 3, 16, 16))
    full, _ = conv.forward(x, need_cache=False)
    import asnet.nn as nn_mod

    monkeypatch.setattr(nn_mod, "_CHUNK_ELEMS", 500)
    chunked, _ = conv.forward(x, need_cache=False)
    np.testing.assert_allclose(chunked, full, rtol=1e-12)


def test_sigmoid_output_is_strictly_inside_unit_interval():
    rng = np.random.default_rng(8)
    conv = Conv2d(1, 1, 1, activation="sigmoid", rng=rng)
    x = np.array([[[[-1e6, 0.0, 1e6]]]], dtype=np.float32)
    y, _ = conv.forward(x, need_cache=False)
    assert y.min() > 0.0
    assert y.max() < 1.0


def test_pool_requires_even_dims_and_conv_rejects_tiny_input():
    with pytest.raises(ValueError):
        MaxPool2d().forward(np.zeros((1, 1, 5, 4)))
    conv = Conv2d(1, 1, 4, stride=2, padding=1, dtype=np.float64)
    with pytest.raises(ValueError):
        conv.forward(np.zeros((1, 1, 1, 1)))


def test_state_dict_round_trip_and_validation():
    rng = np.random.default_rng(9)
    net = Sequential([Conv2d(1, 2, 3, padding=1, rng=rng), Conv2d(2, 1, 3, padding=1, rng=rng)])
    state = net.state_dict()
    other = Sequential(
        [Conv2d(1, 2, 3, padding=1, rng=np.random.default_rng(10)), Conv2d(2, 1, 3, padding=1)]
    )
    other.load_state_dict(state)
    x = np.random.default_rng(11).random((1, 1, 6, 6), dtype=np.float32)
    ya, _ = net.forward(x, need_cache=False)
    yb, _ = other.forward(x, need_cache=False)
    np.testing.assert_array_equal(ya, yb)
    with pytest.raises(ValueError):
        other.load_state_dict({k: v for k, v in list(state.items())[1:]})


def test_backward_without_accumulation_leaves_grads_untouched():
    rng = np.random.default_rng(12)
    net = Sequential([Conv2d(1, 2, 3, padding=1, rng=rng, dtype=np.float64)])
    x = rng.normal(size=(1, 1, 4, 4))
    y, caches = net.forward(x)
    net.zero_grad()
    net.backward(np.ones_like(y), caches, accumulate=False)
    assert all(not g.any() for g in net.gradients().values())
