"""Point annotations to density maps.

Walks through the ground-truth pipeline: a Gaussian kernel, rendering point
annotations into a density map whose sum equals the object count, and
count-preserving downsampling to the resolution a counting network predicts
at. Writes grayscale PNGs next to this script under demos/out/.
"""

import pathlib

import numpy as np

from asnet.data import save_gray
from asnet.density import (
    KernelSpec,
    PointAnnotation,
    downsample_count_preserving,
    gaussian_kernel,
    points_to_density,
)

out = pathlib.Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

print("A normalized Gaussian kernel concentrates one unit of mass per object.")
kernel = gaussian_kernel(sigma=4.0, truncation_radius=4.0)
print(f"  sigma=4 kernel: {kernel.shape[0]}x{kernel.shape[1]}, sum={kernel.sum():.12f}")

print("\nRendering 7 annotated points into a 96x96 map:")
rng = np.random.default_rng(0)
points = [(float(x), float(y)) for x, y in rng.uniform(5, 90, size=(7, 2))]
points.append((1.0, 1.0))  # a corner point: its clipped kernel is renormalized
ann = PointAnnotation(points=points, image_size=(96, 96))
density = points_to_density(ann, KernelSpec(sigma=3.0))
print(f"  {ann.count} points -> density sum {density.sum():.6f}")

print("\nGeometry-adaptive mode scales each kernel by neighbor distances:")
adaptive = points_to_density(ann, KernelSpec(mode="adaptive", sigma=3.0))
print(f"  adaptive sum {adaptive.sum():.6f} (still the count)")

print("\nBlock-sum downsampling by the network stride preserves mass exactly:")
for factor in (2, 4, 8):
    small = downsample_count_preserving(density, factor)
    print(f"  factor {factor}: {small.shape[0]}x{small.shape[1]}, sum {small.sum():.6f}")

save_gray(out / "density_full.png", density / density.max())
small = downsample_count_preserving(density, 4)
save_gray(out / "density_stride4.png", small / small.max())
print(f"\nWrote {out}/density_full.png and density_stride4.png")
