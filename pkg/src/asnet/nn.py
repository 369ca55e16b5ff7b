"""Minimal convolutional network engine on numpy arrays.

Layers operate on NCHW batches and return an output plus an opaque cache;
gradients flow back through ``backward(dy, cache)``, which accumulates
parameter gradients in place and returns the input gradient. Caches are
functional (never stored on the layer), so a frozen network can evaluate
several batches before any backward pass and forward evaluation is reentrant.

Convolution uses im2col plus BLAS matmul. Large forward-only passes are
chunked over output rows to bound memory.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

# im2col buffers above this many elements are processed in row chunks
# (forward only; training-scale inputs stay below it).
_CHUNK_ELEMS = 16_000_000

_ACTIVATIONS = ("none", "relu", "leaky-relu", "sigmoid")


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "none":
        return z
    if activation == "relu":
        return np.maximum(z, 0)
    if activation == "leaky-relu":
        return np.where(z > 0, z, 0.2 * z)
    if activation == "sigmoid":
        # stable two-branch sigmoid; outputs clipped strictly inside (0, 1)
        # because downstream log losses rely on the open interval
        ez = np.exp(-np.abs(z))
        out = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
        return np.clip(out, 1e-6, 1.0 - 1e-6, out=out)
    raise ValueError(f"unknown activation {activation!r}")


def _activation_grad(dy: np.ndarray, y: np.ndarray, activation: str) -> np.ndarray:
    # All supported activations can be differentiated from their output alone.
    if activation == "none":
        return dy
    if activation == "relu":
        return dy * (y > 0)
    if activation == "leaky-relu":
        return dy * np.where(y > 0, 1.0, 0.2)
    if activation == "sigmoid":
        return dy * y * (1.0 - y)
    raise ValueError(f"unknown activation {activation!r}")


class Conv2d:
    """2-D convolution with optional dilation and fused activation."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int | tuple[int, int],
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        activation: str = "none",
        *,
        rng: np.random.Generator | None = None,
        weight_std: float | str = "he",
        dtype=np.float32,
    ):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if kh < 1 or kw < 1 or stride < 1 or dilation < 1:
            raise ValueError("kernel, stride and dilation must be positive")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kh, kw)
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng()
        if weight_std == "he":
            std = math.sqrt(2.0 / (in_channels * kh * kw))
        else:
            std = float(weight_std)
        self.w = rng.normal(0.0, std, size=(out_channels, in_channels, kh, kw)).astype(dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        eff_h = self.dilation * (kh - 1) + 1
        eff_w = self.dilation * (kw - 1) + 1
        oh = (h + 2 * self.padding - eff_h) // self.stride + 1
        ow = (w + 2 * self.padding - eff_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(
                f"input of size {h}x{w} is too small for kernel {self.kernel}, "
                f"stride {self.stride}, padding {self.padding}, dilation {self.dilation}"
            )
        return oh, ow

    def _im2col(self, xp: np.ndarray, ow: int, row0: int, rows: int):
        """Column matrix (c*kh*kw, n*rows*ow) for output rows [row0, row0+rows)."""
        n, c, _, _ = xp.shape
        kh, kw = self.kernel
        s, d = self.stride, self.dilation
        cols = np.empty((c, kh, kw, n, rows, ow), dtype=xp.dtype)
        for ki in range(kh):
            for kj in range(kw):
                hi = ki * d + row0 * s
                wi = kj * d
                patch = xp[:, :, hi : hi + rows * s : s, wi : wi + ow * s : s]
                cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
        return cols.reshape(c * kh * kw, n * rows * ow)

    def forward(self, x: np.ndarray, need_cache: bool = True):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        kh, kw = self.kernel
        oh, ow = self.out_size(h, w)
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        w2 = self.w.reshape(self.out_channels, c * kh * kw)

        if need_cache or n * c * kh * kw * oh * ow <= _CHUNK_ELEMS:
            cols = self._im2col(xp, ow, 0, oh)
            y2 = w2 @ cols
            # transposed view; the activation ufunc materializes it
            y = y2.reshape(self.out_channels, n, oh, ow).transpose(1, 0, 2, 3)
        else:
            y = np.empty((n, self.out_channels, oh, ow), dtype=x.dtype)
            chunk = max(1, _CHUNK_ELEMS // max(1, n * c * kh * kw * ow))
            for r0 in range(0, oh, chunk):
                rows = min(chunk, oh - r0)
                part = w2 @ self._im2col(xp, ow, r0, rows)
                y[:, :, r0 : r0 + rows] = part.reshape(
                    self.out_channels, n, rows, ow
                ).transpose(1, 0, 2, 3)
            cols = None
        y += self.b[:, None, None]
        y = _apply_activation(y, self.activation)
        if need_cache:
            cache = (cols, (h, w), y if self.activation != "none" else None)
        else:
            cache = None
        return y, cache

    def backward(
        self, dy: np.ndarray, cache, accumulate: bool = True, need_input_grad: bool = True
    ) -> np.ndarray | None:
        if cache is None:
            raise RuntimeError("backward requires a forward pass with need_cache=True")
        cols, (h, w), y_act = cache
        n = dy.shape[0]
        kh, kw = self.kernel
        oh, ow = dy.shape[2], dy.shape[3]
        dz = dy if self.activation == "none" else _activation_grad(dy, y_act, self.activation)
        dz2 = np.ascontiguousarray(dz.transpose(1, 0, 2, 3)).reshape(
            self.out_channels, n * oh * ow
        )
        if accumulate:
            self.gw += (dz2 @ cols.T).reshape(self.w.shape)
            self.gb += dz2.sum(axis=1)
        if not need_input_grad:
            return None
        w2 = self.w.reshape(self.out_channels, self.in_channels * kh * kw)
        dcols = (w2.T @ dz2).reshape(self.in_channels, kh, kw, n, oh, ow)

        p, s, d = self.padding, self.stride, self.dilation
        dxp = np.zeros((n, self.in_channels, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for ki in range(kh):
            for kj in range(kw):
                hi, wi = ki * d, kj * d
                dxp[:, :, hi : hi + oh * s : s, wi : wi + ow * s : s] += dcols[
                    :, ki, kj
                ].transpose(1, 0, 2, 3)
        return dxp[:, :, p : p + h, p : p + w] if p else dxp

    def params(self):
        return OrderedDict(w=self.w, b=self.b)

    def grads(self):
        return OrderedDict(w=self.gw, b=self.gb)


class MaxPool2d:
    """2x2 max pooling with stride 2; requires even spatial dims."""

    def __init__(self, size: int = 2):
        if size != 2:
            raise ValueError("only 2x2 pooling is supported")
        self.size = 2

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        if h % 2 or w % 2:
            raise ValueError(f"pooling input {h}x{w} must have even dims")
        return h // 2, w // 2

    def forward(self, x: np.ndarray, need_cache: bool = True):
        n, c, h, w = x.shape
        h2, w2 = self.out_size(h, w)
        win = x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        cache = (idx, (h, w)) if need_cache else None
        return y, cache

    def backward(self, dy: np.ndarray, cache, accumulate: bool = True) -> np.ndarray:
        idx, (h, w) = cache
        n, c, h2, w2 = dy.shape
        dwin = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        return dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)

    def params(self):
        return OrderedDict()

    def grads(self):
        return OrderedDict()


class NearestUpsample:
    """Nearest-neighbor upsampling by an integer factor."""

    def __init__(self, factor: int):
        if factor < 1:
            raise ValueError(f"factor must be >= 1, got {factor}")
        self.factor = int(factor)

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        return h * self.factor, w * self.factor

    def forward(self, x: np.ndarray, need_cache: bool = True):
        y = x.repeat(self.factor, axis=2).repeat(self.factor, axis=3)
        return y, x.shape if need_cache else None

    def backward(self, dy: np.ndarray, cache, accumulate: bool = True) -> np.ndarray:
        n, c, h, w = cache
        f = self.factor
        return dy.reshape(n, c, h, f, w, f).sum(axis=(3, 5))

    def params(self):
        return OrderedDict()

    def grads(self):
        return OrderedDict()


class Sequential:
    """A feed-forward stack of layers with functional caches."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, need_cache: bool = True):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, need_cache=need_cache)
            caches.append(cache)
        return x, caches

    def backward(
        self, dy: np.ndarray, caches, accumulate: bool = True, need_input_grad: bool = True
    ) -> np.ndarray | None:
        last = len(self.layers) - 1
        for pos, (layer, cache) in enumerate(zip(reversed(self.layers), reversed(caches))):
            if pos == last and not need_input_grad and isinstance(layer, Conv2d):
                return layer.backward(dy, cache, accumulate=accumulate, need_input_grad=False)
            dy = layer.backward(dy, cache, accumulate=accumulate)
        return dy

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        for layer in self.layers:
            h, w = layer.out_size(h, w)
        return h, w

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"{i}.{name}"] = arr
        return out

    def gradients(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grads().items():
                out[f"{i}.{name}"] = arr
        return out

    def zero_grad(self) -> None:
        for g in self.gradients().values():
            g[...] = 0.0

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        idx, attr = name.split(".")
        layer = self.layers[int(idx)]
        target = getattr(layer, attr)
        target[...] = value

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ValueError(f"state is missing parameters: {sorted(missing)}")
        for name, arr in params.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {arr.shape}")
            arr[...] = src.astype(arr.dtype)

    def astype(self, dtype) -> "Sequential":
        for layer in self.layers:
            for attr in ("w", "b", "gw", "gb"):
                if hasattr(layer, attr):
                    setattr(layer, attr, getattr(layer, attr).astype(dtype))
        return self
