"""Domain-adaptive density counting with coarse-to-fine adversarial scoring.

A numpy library implementing the full pipeline: density-map ground truth
from point annotations, a counting generator with global and local domain
discriminators, adversarial alignment losses, four-level significance
scores that re-weight the source density loss, the alternating training
loop, and MAE/MSE/GAME evaluation. Everything runs on CPU; a toy backbone
makes end-to-end adaptation experiments feasible at desk scale.
"""

from .density import (
    KernelSpec,
    PointAnnotation,
    downsample_count_preserving,
    gaussian_kernel,
    points_to_density,
)
from .metrics import CountRecord, apply_roi, game, mae_mse
from .models import Discriminator, Generator, split_patches, reassemble_patches
from .objective import (
    LossReport,
    density_loss,
    total_generator_loss,
    weighted_density_loss,
)
from .scoring import (
    ScoreSet,
    image_score,
    patch_pixel_score,
    patch_score,
    pixel_score,
)
from .trainer import TrainConfig, evaluate, init_state, toy_config, train, train_step

__version__ = "0.1.0"

__all__ = [
    "KernelSpec",
    "PointAnnotation",
    "downsample_count_preserving",
    "gaussian_kernel",
    "points_to_density",
    "CountRecord",
    "apply_roi",
    "game",
    "mae_mse",
    "Discriminator",
    "Generator",
    "split_patches",
    "reassemble_patches",
    "LossReport",
    "density_loss",
    "total_generator_loss",
    "weighted_density_loss",
    "ScoreSet",
    "image_score",
    "patch_pixel_score",
    "patch_score",
    "pixel_score",
    "TrainConfig",
    "evaluate",
    "init_state",
    "toy_config",
    "train",
    "train_step",
    "__version__",
]
