"""Dataset loading, preprocessing, synthetic two-domain data, density files.

Disk layout for one split::

    <root>/<split>/images/<stem>.png
    <root>/<split>/annotations/<stem>.json   (optional for target domains)
    <root>/<split>/roi.png                   (optional, applies to the split)

Annotations are JSON documents ``{"points": [[x, y], ...], "height": H,
"width": W}`` with float pixel coordinates, origin top-left. If a split has
an ``annotations`` directory, every image must have a matching file; without
the directory all samples load unlabeled.

Density maps serialize to a small binary format: magic ``ASDM``, a version
byte (1), three reserved bytes, height and width as little-endian uint32,
then float32 row-major values.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .density import KernelSpec, PointAnnotation, downsample_count_preserving, points_to_density

DENSITY_MAGIC = b"ASDM"
DENSITY_VERSION = 1
_HEADER = struct.Struct("<4sB3xII")


class DensityIOError(ValueError):
    """Malformed density binary."""


class BadMagicError(DensityIOError):
    pass


class BadVersionError(DensityIOError):
    pass


class TruncatedError(DensityIOError):
    pass


def density_to_bytes(density: np.ndarray) -> bytes:
    density = np.asarray(density)
    if density.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {density.shape}")
    h, w = density.shape
    header = _HEADER.pack(DENSITY_MAGIC, DENSITY_VERSION, h, w)
    return header + np.ascontiguousarray(density, dtype="<f4").tobytes()


def density_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise TruncatedError(f"header needs {_HEADER.size} bytes, got {len(blob)}")
    magic, version, h, w = _HEADER.unpack_from(blob)
    if magic != DENSITY_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != DENSITY_VERSION:
        raise BadVersionError(f"unsupported version {version}")
    expected = _HEADER.size + 4 * h * w
    if len(blob) < expected:
        raise TruncatedError(f"payload truncated: need {expected} bytes, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", count=h * w, offset=_HEADER.size)
    return values.reshape(h, w).copy()


def save_density(path, density: np.ndarray) -> None:
    Path(path).write_bytes(density_to_bytes(density))


def load_density(path) -> np.ndarray:
    return density_from_bytes(Path(path).read_bytes())


def save_image(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1], shape (H, W, 3), as 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_gray(path, values: np.ndarray) -> None:
    """Write a float array in [0, 1] as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="L").save(path)


def save_annotation(path, ann: PointAnnotation) -> None:
    h, w = ann.image_size
    doc = {"points": [[x, y] for x, y in ann.points], "height": h, "width": w}
    Path(path).write_text(json.dumps(doc))


def load_annotation(path) -> PointAnnotation:
    doc = json.loads(Path(path).read_text())
    return PointAnnotation(points=doc["points"], image_size=(doc["height"], doc["width"]))


@dataclass
class Sample:
    """One dataset entry; ``annotation`` is None for unlabeled target images."""

    name: str
    image: np.ndarray
    annotation: PointAnnotation | None = None
    roi: np.ndarray | None = None


class DiskDataset:
    """Lazy, filename-ordered view of one split on disk."""

    def __init__(self, root, split: str):
        self.split_dir = Path(root) / split
        image_dir = self.split_dir / "images"
        if not image_dir.is_dir():
            self.stems: list[str] = []
        else:
            self.stems = sorted(p.stem for p in image_dir.glob("*.png"))
        self.ann_dir = self.split_dir / "annotations"
        self.has_annotations = self.ann_dir.is_dir()
        roi_path = self.split_dir / "roi.png"
        self.roi = None
        if roi_path.exists():
            self.roi = (load_image(roi_path)[..., 0] > 0.5).astype(np.uint8)

    def __len__(self) -> int:
        return len(self.stems)

    def __getitem__(self, index: int) -> Sample:
        stem = self.stems[index]
        image = load_image(self.split_dir / "images" / f"{stem}.png")
        ann = None
        if self.has_annotations:
            ann_path = self.ann_dir / f"{stem}.json"
            if not ann_path.exists():
                raise FileNotFoundError(f"missing annotation for image stem {stem!r}")
            ann = load_annotation(ann_path)
            h, w = image.shape[:2]
            if ann.image_size != (h, w):
                raise ValueError(
                    f"annotation size {ann.image_size} does not match image "
                    f"{(h, w)} for stem {stem!r}"
                )
        return Sample(name=stem, image=image, annotation=ann, roi=self.roi)

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def load_dataset(root, split: str) -> DiskDataset:
    """Open one split; deterministic filename order, images decoded lazily."""
    return DiskDataset(root, split)


@dataclass(frozen=True)
class BackgroundModel:
    """Per-domain background statistics for synthetic scenes."""

    brightness: tuple[float, float] = (0.7, 0.95)
    noise: float = 0.02
    texture_freq: float = 0.0  # cycles across the image; 0 disables texture
    texture_amp: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic two-domain blob-counting scenes.

    Both domains share the blob (object) model; only the background differs,
    which is the controlled domain gap.
    """

    image_size: int = 64
    count_range: tuple[int, int] = (5, 30)
    radius_range: tuple[float, float] = (2.0, 3.5)
    blob_amplitude: float = -0.55
    backgrounds: dict = field(
        default_factory=lambda: {
            "source": BackgroundModel(),
            "target": BackgroundModel(
                brightness=(0.25, 0.45), noise=0.04, texture_freq=9.0, texture_amp=0.16
            ),
        }
    )
    seed: int = 0


def _render_scene(spec: SynthSpec, domain: str, rng: np.random.Generator):
    size = spec.image_size
    bg = spec.backgrounds[domain]
    level = rng.uniform(*bg.brightness)
    image = np.full((size, size), level, dtype=np.float64)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if bg.texture_amp > 0.0 and bg.texture_freq > 0.0:
        phase = rng.uniform(0, 2 * np.pi, size=2)
        angle = rng.uniform(0, np.pi)
        k = 2 * np.pi * bg.texture_freq / size
        wave = np.sin(k * (np.cos(angle) * xx + np.sin(angle) * yy) + phase[0])
        wave += np.sin(k * (np.cos(angle + np.pi / 2) * xx + np.sin(angle + np.pi / 2) * yy) + phase[1])
        image += bg.texture_amp * 0.5 * wave
    if bg.noise > 0.0:
        image += rng.normal(0.0, bg.noise, size=(size, size))

    count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    margin = 2.0
    points = []
    for _ in range(count):
        x = rng.uniform(margin, size - 1 - margin)
        y = rng.uniform(margin, size - 1 - margin)
        radius = rng.uniform(*spec.radius_range)
        sigma = radius / 2.0
        bump = np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * sigma * sigma))
        image += spec.blob_amplitude * bump
        points.append((x, y))
    image = np.clip(image, 0.0, 1.0)
    rgb = np.stack([image, image, image], axis=-1)
    ann = PointAnnotation(points=points, image_size=(size, size))
    return rgb.astype(np.float32), ann


def synth_dataset(spec: SynthSpec, n_images: int, domain: str, out_root, split: str = "train"):
    """Write a synthetic split to disk and return its DiskDataset view.

    The RNG seed is derived from (spec.seed, domain, split), so the source
    and target splits of one spec differ only through their background
    models and sampling noise.
    """
    if domain not in spec.backgrounds:
        raise ValueError(f"unknown domain {domain!r}")
    split_dir = Path(out_root) / split
    (split_dir / "images").mkdir(parents=True, exist_ok=True)
    (split_dir / "annotations").mkdir(parents=True, exist_ok=True)
    seed = np.random.SeedSequence(
        [spec.seed, zlib.crc32(domain.encode()), zlib.crc32(split.encode())]
    )
    rng = np.random.default_rng(seed)
    for i in range(int(n_images)):
        image, ann = _render_scene(spec, domain, rng)
        stem = f"{domain}_{i:04d}"
        save_image(split_dir / "images" / f"{stem}.png", image)
        save_annotation(split_dir / "annotations" / f"{stem}.json", ann)
    return load_dataset(out_root, split)


def flip_points(points, width: int):
    """Mirror x-coordinates; an exact involution on [0, width-1]."""
    return [((width - 1) - x, y) for x, y in points]


def _resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    pil = Image.fromarray((np.clip(image, 0, 1) * 255.0).round().astype(np.uint8))
    out = pil.resize((size, size), resample=Image.BILINEAR)
    return np.asarray(out, dtype=np.float32) / 255.0


def preprocess(
    sample: Sample,
    input_size: int,
    output_stride: int,
    kernel: KernelSpec | None = None,
    rng: np.random.Generator | None = None,
    flip_prob: float = 0.5,
):
    """Resize a sample and build its stride-resolution density target.

    Returns ``(image, target)`` with image as (3, input_size, input_size)
    float32 and target as the block-sum downsampled density map (or None for
    unlabeled samples). The target is regenerated from rescaled point
    coordinates rather than warped, so its sum stays the point count. With an
    ``rng``, a horizontal flip is applied to image and points together.
    """
    if input_size <= 0:
        raise ValueError(f"input_size must be positive, got {input_size}")
    if input_size % output_stride:
        raise ValueError(
            f"input_size {input_size} is not divisible by output stride {output_stride}"
        )
    image = np.asarray(sample.image)
    h, w = image.shape[:2]
    resized = _resize_bilinear(image, input_size) if (h, w) != (input_size, input_size) else image

    points = None
    if sample.annotation is not None:
        sx = input_size / w
        sy = input_size / h
        points = [
            (min(x * sx, input_size - 1e-6), min(y * sy, input_size - 1e-6))
            for x, y in sample.annotation.points
        ]

    if rng is not None and rng.random() < flip_prob:
        resized = resized[:, ::-1, :].copy()
        if points is not None:
            points = flip_points(points, input_size)

    target = None
    if points is not None:
        ann = PointAnnotation(points=points, image_size=(input_size, input_size))
        dmap = points_to_density(ann, kernel or KernelSpec())
        target = downsample_count_preserving(dmap, output_stride).astype(np.float32)

    tensor = np.ascontiguousarray(resized.transpose(2, 0, 1), dtype=np.float32)
    if not np.isfinite(tensor).all():
        raise ValueError(f"sample {sample.name!r} produced non-finite image values")
    return tensor, target
