"""Declarative network definitions: counting generator and dual discriminator.

The generator is a VGG-16 frontend, two dilated 3x3 conv layers and a linear
1-channel head, producing density maps at 1/16 input resolution. The
discriminators are five-layer 4x4 conv stacks (strides 2,2,2,2,1) ending in a
sigmoid, so every output value lies strictly in (0, 1). A small "toy" pair
(stride-4 generator, slim discriminator) exists purely for CPU-scale runs and
is selected through the config; it is not part of the reference architecture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, MaxPool2d, NearestUpsample, Sequential

# Smallest spatial size the discriminator stack can reduce without a
# degenerate (empty) feature map.
DISCRIMINATOR_MIN_INPUT = 16

GENERATOR_STRIDES = {"vgg16": 16, "toy": 4}


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "maxpool" | "upsample-nearest"
    kernel: tuple[int, int] = (3, 3)
    out_channels: int = 0
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in ("conv", "maxpool", "upsample-nearest"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(self.kernel) < 1 or self.stride < 1 or self.dilation < 1:
            raise ValueError("kernel, stride and dilation must be positive")


def _conv(out_channels, kernel=3, stride=1, padding=1, dilation=1, activation="relu"):
    return LayerSpec(
        kind="conv",
        kernel=(kernel, kernel),
        out_channels=out_channels,
        stride=stride,
        padding=padding,
        dilation=dilation,
        activation=activation,
    )


_POOL = LayerSpec(kind="maxpool", kernel=(2, 2), stride=2)


def generator_layers(backbone: str = "vgg16") -> list[LayerSpec]:
    """Layer list for the counting generator."""
    if backbone == "vgg16":
        widths = [(64, 2), (128, 2), (256, 3), (512, 3)]
        layers: list[LayerSpec] = []
        for channels, repeat in widths:
            layers += [_conv(channels)] * repeat
            layers.append(_POOL)
        layers += [_conv(512)] * 3
        # dilated backend and linear head
        layers.append(_conv(256, padding=4, dilation=4))
        layers.append(_conv(64, padding=4, dilation=4))
        layers.append(_conv(1, activation="none"))
        return layers
    if backbone == "toy":
        # leaky activations: no born-dead channels at this tiny width
        return [
            _conv(16, activation="leaky-relu"),
            _POOL,
            _conv(32, activation="leaky-relu"),
            _POOL,
            _conv(1, activation="none"),
        ]
    raise ValueError(f"unknown backbone {backbone!r}")


def discriminator_layers(variant: str = "full") -> list[LayerSpec]:
    """Layer list for a domain discriminator over 1-channel density maps."""
    if variant == "full":
        channels = (64, 128, 256, 512)
    elif variant == "toy":
        channels = (16, 32, 64, 128)
    else:
        raise ValueError(f"unknown discriminator variant {variant!r}")
    layers = [
        _conv(c, kernel=4, stride=2, padding=1, activation="leaky-relu") for c in channels
    ]
    layers.append(_conv(1, kernel=4, stride=1, padding=2, activation="sigmoid"))
    return layers


def build_network(
    specs: list[LayerSpec],
    in_channels: int,
    *,
    rng: np.random.Generator | None = None,
    weight_std: float | str = "he",
    dtype=np.float32,
) -> Sequential:
    layers = []
    chans = in_channels
    for spec in specs:
        if spec.kind == "conv":
            layers.append(
                Conv2d(
                    chans,
                    spec.out_channels,
                    spec.kernel,
                    stride=spec.stride,
                    padding=spec.padding,
                    dilation=spec.dilation,
                    activation=spec.activation,
                    rng=rng,
                    weight_std=weight_std,
                    dtype=dtype,
                )
            )
            chans = spec.out_channels
        elif spec.kind == "maxpool":
            layers.append(MaxPool2d())
        else:
            layers.append(NearestUpsample(spec.stride))
    return Sequential(layers)


def parameter_count(specs: list[LayerSpec], in_channels: int) -> int:
    """Closed-form parameter total (weights + biases) for a layer list."""
    total = 0
    chans = in_channels
    for spec in specs:
        if spec.kind == "conv":
            kh, kw = spec.kernel
            total += kh * kw * chans * spec.out_channels + spec.out_channels
            chans = spec.out_channels
    return total


def output_shape(specs: list[LayerSpec], h: int, w: int) -> tuple[int, int]:
    """Spatial output size from the conv arithmetic of a layer list."""
    for spec in specs:
        if spec.kind == "conv":
            kh, kw = spec.kernel
            eff_h = spec.dilation * (kh - 1) + 1
            eff_w = spec.dilation * (kw - 1) + 1
            h = (h + 2 * spec.padding - eff_h) // spec.stride + 1
            w = (w + 2 * spec.padding - eff_w) // spec.stride + 1
            if h < 1 or w < 1:
                raise ValueError("input too small for this layer stack")
        elif spec.kind == "maxpool":
            if h % 2 or w % 2:
                raise ValueError(f"pooling input {h}x{w} must have even dims")
            h, w = h // 2, w // 2
        else:
            h, w = h * spec.stride, w * spec.stride
    return h, w


class Generator:
    """Counting network: RGB image batch -> density map batch.

    Input is NCHW with values in [0, 1] and spatial dims divisible by
    ``output_stride``; output is (N, 1, H/stride, W/stride).
    """

    def __init__(self, backbone: str = "vgg16", *, rng=None, dtype=np.float32):
        self.backbone = backbone
        self.output_stride = GENERATOR_STRIDES[backbone]
        self.specs = generator_layers(backbone)
        std = 0.01 if backbone == "vgg16" else "he"
        rng = rng if rng is not None else np.random.default_rng()
        self.net = build_network(self.specs, 3, rng=rng, weight_std=std, dtype=dtype)
        if backbone == "toy":
            # near-zero head: initial density predictions start at the scale
            # of the (mostly empty) targets instead of O(1) noise
            head = self.net.layers[-1]
            head.w = rng.normal(0.0, 0.01, size=head.w.shape).astype(dtype)
            head.gw = np.zeros_like(head.w)

    def forward(self, images: np.ndarray, need_cache: bool = True):
        images = np.asarray(images)
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) images, got shape {images.shape}")
        h, w = images.shape[2], images.shape[3]
        s = self.output_stride
        if h % s or w % s:
            raise ValueError(f"image size {h}x{w} is not divisible by output stride {s}")
        return self.net.forward(images, need_cache=need_cache)

    def backward(self, dmaps, caches, accumulate: bool = True, need_input_grad: bool = False):
        return self.net.backward(
            dmaps, caches, accumulate=accumulate, need_input_grad=need_input_grad
        )

    def load_frontend(self, npz_path) -> int:
        """Load pretrained frontend conv weights from an npz archive.

        Arrays are keyed ``conv{i}_w`` / ``conv{i}_b`` in frontend order
        (13 conv layers for the vgg16 backbone). Layers beyond the archive
        keep their random init. Returns the number of layers loaded.
        """
        convs = [l for l in self.net.layers if isinstance(l, Conv2d)]
        loaded = 0
        with np.load(npz_path) as arrays:
            for i, conv in enumerate(convs):
                wk, bk = f"conv{i}_w", f"conv{i}_b"
                if wk not in arrays.files:
                    break
                if arrays[wk].shape != conv.w.shape:
                    raise ValueError(
                        f"pretrained {wk} shape {arrays[wk].shape} != {conv.w.shape}"
                    )
                conv.w[...] = arrays[wk].astype(conv.w.dtype)
                conv.b[...] = arrays[bk].astype(conv.b.dtype)
                loaded += 1
        return loaded


class Discriminator:
    """Domain classifier over density maps; outputs lie strictly in (0, 1)."""

    def __init__(self, variant: str = "full", *, rng=None, dtype=np.float32):
        self.variant = variant
        self.specs = discriminator_layers(variant)
        std = 0.01 if variant == "full" else "he"
        self.net = build_network(self.specs, 1, rng=rng, weight_std=std, dtype=dtype)

    def forward(self, density: np.ndarray, need_cache: bool = True):
        density = np.asarray(density)
        if density.ndim != 4 or density.shape[1] != 1:
            raise ValueError(f"expected (N, 1, h, w) maps, got shape {density.shape}")
        h, w = density.shape[2], density.shape[3]
        if h < DISCRIMINATOR_MIN_INPUT or w < DISCRIMINATOR_MIN_INPUT:
            raise ValueError(
                f"discriminator input {h}x{w} is below the minimum size "
                f"{DISCRIMINATOR_MIN_INPUT}"
            )
        return self.net.forward(density, need_cache=need_cache)

    def backward(self, dout, caches, accumulate: bool = True, need_input_grad: bool = True):
        return self.net.backward(
            dout, caches, accumulate=accumulate, need_input_grad=need_input_grad
        )


def split_patches(maps: np.ndarray, s: int) -> np.ndarray:
    """Split maps into an s x s grid of patches, row-major (top-left first).

    Accepts (h, w) or (N, h, w); returns (s*s, hp, wp) or (N, s*s, hp, wp).
    """
    maps = np.asarray(maps)
    s = int(s)
    if s < 1:
        raise ValueError(f"patch grid size must be >= 1, got {s}")
    single = maps.ndim == 2
    if single:
        maps = maps[None]
    if maps.ndim != 3:
        raise ValueError(f"expected (h, w) or (N, h, w), got shape {maps.shape}")
    n, h, w = maps.shape
    if h % s or w % s:
        raise ValueError(f"map of size {h}x{w} is not divisible into {s}x{s} patches")
    hp, wp = h // s, w // s
    patches = (
        maps.reshape(n, s, hp, s, wp).transpose(0, 1, 3, 2, 4).reshape(n, s * s, hp, wp)
    )
    return patches[0] if single else patches


def reassemble_patches(patches: np.ndarray, s: int) -> np.ndarray:
    """Inverse of :func:`split_patches` for the same row-major ordering."""
    patches = np.asarray(patches)
    single = patches.ndim == 3
    if single:
        patches = patches[None]
    n, ss, hp, wp = patches.shape
    if ss != s * s:
        raise ValueError(f"expected {s * s} patches, got {ss}")
    maps = (
        patches.reshape(n, s, s, hp, wp).transpose(0, 1, 3, 2, 4).reshape(n, s * hp, s * wp)
    )
    return maps[0] if single else maps
