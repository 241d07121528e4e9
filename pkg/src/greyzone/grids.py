"""Grid containers, the label alphabet, and per-branch label remapping.

Everything downstream (auto-labelling, training, metrics) works on three
raster types: a quantized height map with a validity mask, a label map over
{unknown, drivable, obstacle, grey}, and a fused score map. All containers
are immutable after construction so they can be shared freely across
threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

# Quantization window in meters relative to the ego ground plane. Fixed, not
# per-frame: the same physical obstacle must produce the same pixel value in
# every frame.
DEFAULT_HEIGHT_WINDOW = (-2.0, 4.0)


class Label(IntEnum):
    """Pixel classes. Codes are frozen: they are the on-disk PGM values."""

    UNK = 0
    DRI = 1
    OBS = 2
    GRE = 3


class Role(Enum):
    HUMAN_GT = "human_gt"
    WEAK = "weak"
    PREDICTION = "prediction"
    BRANCH_TARGET = "branch_target"


class BranchId(Enum):
    """The two binary heads: one separates drivable, one separates obstacle."""

    DRI_BRANCH = Label.DRI
    OBS_BRANCH = Label.OBS

    @property
    def positive(self) -> Label:
        return self.value

    @property
    def opposite(self) -> Label:
        """Flip of the branch's positive class (drivable <-> obstacle)."""
        return Label.OBS if self is BranchId.DRI_BRANCH else Label.DRI


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HeightMap:
    """Quantized bird's-eye-view elevation grid plus validity mask.

    ``height`` holds integers in [0, 255]; ``valid`` marks cells with at
    least one LiDAR return. Invalid cells carry height 0 by convention and
    must never influence losses or metrics.
    """

    height: np.ndarray
    valid: np.ndarray
    resolution: float = 0.2
    window: tuple[float, float] = DEFAULT_HEIGHT_WINDOW

    def __post_init__(self) -> None:
        height = np.asarray(self.height)
        valid = np.asarray(self.valid, dtype=bool)
        if height.ndim != 2 or height.shape != valid.shape:
            raise ValueError(f"height {height.shape} / valid {valid.shape} shape mismatch")
        if height.min(initial=0) < 0 or height.max(initial=0) > 255:
            raise ValueError("height values must lie in [0, 255]")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if not self.window[0] < self.window[1]:
            raise ValueError("degenerate height window")
        height = np.where(valid, height, 0).astype(np.uint8)
        object.__setattr__(self, "height", _readonly(height))
        object.__setattr__(self, "valid", _readonly(valid))

    @property
    def rows(self) -> int:
        return self.height.shape[0]

    @property
    def cols(self) -> int:
        return self.height.shape[1]


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel labels with the role they play in the pipeline."""

    labels: np.ndarray
    role: Role

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("labels must be a 2-D grid")
        if labels.min(initial=0) < 0 or labels.max(initial=0) > int(Label.GRE):
            raise ValueError("labels contain codes outside the alphabet")
        labels = labels.astype(np.uint8)
        if self.role in (Role.WEAK, Role.BRANCH_TARGET) and (labels == Label.GRE).any():
            raise ValueError(f"{self.role.value} maps must not contain grey pixels")
        object.__setattr__(self, "labels", _readonly(labels))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class CostMap:
    """Fused traversability score (1 = most drivable) plus both branch grids."""

    score: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self) -> None:
        grids = {}
        shape = None
        for name in ("score", "s1", "s2"):
            g = np.asarray(getattr(self, name), dtype=np.float64)
            if shape is None:
                shape = g.shape
            if g.ndim != 2 or g.shape != shape:
                raise ValueError("score/s1/s2 must share a 2-D shape")
            if g.size and (g.min() < -1e-9 or g.max() > 1 + 1e-9):
                raise ValueError(f"{name} values fall outside [0, 1]")
            grids[name] = _readonly(np.clip(g, 0.0, 1.0))
        for name, g in grids.items():
            object.__setattr__(self, name, g)


def remap_label(g: Label, branch: BranchId) -> Label:
    """Branch target for one human label: grey becomes the opposite class.

    Drivable branch trains grey as obstacle, obstacle branch trains grey as
    drivable; drivable/obstacle pass through, unknown stays unknown (it is
    masked out of the loss downstream).
    """
    if g == Label.GRE:
        return branch.opposite
    return Label(g)


def remap_weak_target(g_weak: Label, observed: bool, branch: BranchId) -> Label:
    """Branch target for one weak label.

    Unobserved pixels stay unknown. Observed but unlabelled pixels get the
    branch's opposite class: with only path/obstacle weak evidence, absence
    of a positive label is treated as a (conservative) negative.
    """
    if not observed:
        return Label.UNK
    if g_weak == Label.UNK:
        return branch.opposite
    return remap_label(g_weak, branch)


def build_target_map(labels: LabelMap, valid: np.ndarray, branch: BranchId, weak: bool) -> LabelMap:
    """Apply the per-pixel remapping rule over a whole map.

    ``weak=False`` expects a HUMAN_GT map and applies :func:`remap_label`;
    ``weak=True`` expects a WEAK map and applies :func:`remap_weak_target`
    using ``valid`` as the per-pixel observation flag. The output never
    contains grey.
    """
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != labels.shape:
        raise ValueError(f"labels {labels.shape} / valid {valid.shape} shape mismatch")
    expected = Role.WEAK if weak else Role.HUMAN_GT
    if labels.role not in (expected, Role.BRANCH_TARGET):
        raise ValueError(f"expected a {expected.value} map, got {labels.role.value}")
    codes = labels.labels
    opp = np.uint8(branch.opposite)
    out = np.where(codes == Label.GRE, opp, codes)
    if weak:
        out = np.where(codes == Label.UNK, opp, out)
        out = np.where(valid, out, np.uint8(Label.UNK))
    return LabelMap(out.astype(np.uint8), Role.BRANCH_TARGET)
