"""Dual-branch traversability mapping for off-road LiDAR height maps."""

from .grids import BranchId, CostMap, HeightMap, Label, LabelMap, Role
from .model import DualBranchModel, FusionConfig, ThreeClassModel, fuse
from .trainer import TrainConfig, TrainMode, TrainScene, train

__version__ = "0.1.0"

__all__ = [
    "BranchId",
    "CostMap",
    "DualBranchModel",
    "FusionConfig",
    "HeightMap",
    "Label",
    "LabelMap",
    "Role",
    "ThreeClassModel",
    "TrainConfig",
    "TrainMode",
    "TrainScene",
    "fuse",
    "train",
    "__version__",
]
