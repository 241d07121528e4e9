"""Dataset splitting, rotation augmentation, and the training loop.

Four supervision modes share one loop: fully supervised (human labels),
weakly supervised (auto-generated labels only), semi-supervised (all weak
labels plus human labels on a visible fraction of the training scenes),
and the flat three-class baseline. Batches mix scenes uniformly, per-sample
losses are averaged, and Adam updates both branches. All randomness flows
from the config seed; two runs with the same seed produce bit-identical
logs. The checkpoint returned is the one with the best validation drivable
F1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import metrics, nnet
from .bev import Pose2p5D
from .grids import HeightMap, Label, LabelMap
from .model import DEFAULT_WIDTHS, DualBranchModel, FusionConfig, ThreeClassModel


class TrainMode(str, Enum):
    FULL = "full"
    WEAK = "weak"
    SEMI = "semi"
    BASELINE_3CLASS = "3class"


@dataclass(frozen=True)
class TrainConfig:
    mode: TrainMode
    human_ratio: float = 1.0  # fraction of training scenes with visible human labels (SEMI)
    weak_weight: float = 0.4  # weight of the weak-label loss term
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    augment: bool = True
    split: tuple[float, float, float] = (0.60, 0.15, 0.25)
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    input_validity_channel: bool = True
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self) -> None:
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if not 0.0 <= self.human_ratio <= 1.0:
            raise ValueError("human_ratio must lie in [0, 1]")
        if self.weak_weight < 0:
            raise ValueError("weak-label weight must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be positive")


@dataclass
class TrainScene:
    """One training sample: inputs plus whichever label sources exist."""

    heightmap: HeightMap
    human_gt: LabelMap | None = None
    weak: LabelMap | None = None
    path_mask: np.ndarray | None = None

    @classmethod
    def from_record(cls, record, weak: LabelMap | None = None):
        return cls(record.heightmap, record.human_gt, weak, record.path_mask)


def split_dataset(scenes, fractions, seed: int):
    """Deterministic shuffled partition into train/validation/test."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("empty dataset")
    f_train, f_val, f_test = fractions
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    order = np.random.default_rng(seed).permutation(len(scenes))
    n = len(scenes)
    n_train = int(math.floor(f_train * n + 0.5))
    n_val = int(math.floor((f_train + f_val) * n + 0.5)) - n_train
    train = [scenes[i] for i in order[:n_train]]
    val = [scenes[i] for i in order[n_train : n_train + n_val]]
    test = [scenes[i] for i in order[n_train + n_val :]]
    return train, val, test


def _rotated_indices(rows: int, cols: int, angle: float):
    """Source coordinates that realize a rotation about the grid center."""
    jj, kk = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    cj, ck = (rows - 1) / 2.0, (cols - 1) / 2.0
    dj, dk = jj - cj, kk - ck
    c, s = math.cos(angle), math.sin(angle)
    return cj + c * dj + s * dk, ck - s * dj + c * dk


def _rotate_height(hmap: HeightMap, sj: np.ndarray, sk: np.ndarray) -> HeightMap:
    rows, cols = hmap.height.shape
    j0 = np.floor(sj).astype(np.int64)
    k0 = np.floor(sk).astype(np.int64)
    a = sj - j0
    b = sk - k0
    height = np.zeros((rows, cols))
    weight = np.zeros((rows, cols))
    # Bilinear over valid in-bounds sources only, renormalized, so unknown
    # cells (stored as height 0) never bleed into observed terrain.
    for dj, dk, w in ((0, 0, (1 - a) * (1 - b)), (0, 1, (1 - a) * b), (1, 0, a * (1 - b)), (1, 1, a * b)):
        j, k = j0 + dj, k0 + dk
        inb = (j >= 0) & (j < rows) & (k >= 0) & (k < cols)
        jc, kc = np.clip(j, 0, rows - 1), np.clip(k, 0, cols - 1)
        vw = w * inb * hmap.valid[jc, kc]
        height += vw * hmap.height[jc, kc]
        weight += vw
    jn = np.rint(sj).astype(np.int64)
    kn = np.rint(sk).astype(np.int64)
    inb = (jn >= 0) & (jn < rows) & (kn >= 0) & (kn < cols)
    jc, kc = np.clip(jn, 0, rows - 1), np.clip(kn, 0, cols - 1)
    valid = inb & hmap.valid[jc, kc]
    safe = weight > 1e-12
    codes = np.zeros((rows, cols), dtype=np.int64)
    out = valid & safe
    codes[out] = np.floor(height[out] / weight[out] + 0.5).astype(np.int64)
    return HeightMap(codes, valid & safe, hmap.resolution, hmap.window)


def _rotate_nearest(arr: np.ndarray, sj: np.ndarray, sk: np.ndarray, fill):
    rows, cols = arr.shape
    jn = np.rint(sj).astype(np.int64)
    kn = np.rint(sk).astype(np.int64)
    inb = (jn >= 0) & (jn < rows) & (kn >= 0) & (kn < cols)
    jc, kc = np.clip(jn, 0, rows - 1), np.clip(kn, 0, cols - 1)
    return np.where(inb, arr[jc, kc], fill)


def augment_rotate(sample, angle: float):
    """Rotate a scene about the grid center: bilinear heights, nearest labels.

    Pixels rotated in from outside the grid become unknown/invalid. Works on
    any dataclass exposing heightmap/human_gt plus optionally weak,
    path_mask, trajectory, and terrain.
    """
    hmap: HeightMap = sample.heightmap
    sj, sk = _rotated_indices(hmap.rows, hmap.cols, angle)
    updates = {"heightmap": _rotate_height(hmap, sj, sk)}
    for name in ("human_gt", "weak"):
        lmap = getattr(sample, name, None)
        if lmap is not None:
            rotated = _rotate_nearest(lmap.labels, sj, sk, np.uint8(Label.UNK))
            updates[name] = LabelMap(rotated, lmap.role)
    pm = getattr(sample, "path_mask", None)
    if pm is not None:
        updates["path_mask"] = _rotate_nearest(pm, sj, sk, False)
    traj = getattr(sample, "trajectory", None)
    if traj is not None:
        c, s = math.cos(angle), math.sin(angle)
        updates["trajectory"] = [
            Pose2p5D(c * p.x - s * p.y, s * p.x + c * p.y, p.z, p.yaw + angle) for p in traj
        ]
    if getattr(sample, "terrain", None) is not None:
        updates["terrain"] = None  # the continuous surface is not resampled
    return replace(sample, **updates)


@dataclass
class TrainResult:
    model: object
    fusion: FusionConfig
    log: list
    best_epoch: int
    config: TrainConfig


def _validation_scores(model, fusion: FusionConfig, scenes) -> tuple[float, float]:
    reports = []
    for sc in scenes:
        _, pred = model.predict(sc.heightmap, fusion)
        reports.append(metrics.evaluate(pred, sc.human_gt, sc.path_mask))
    agg = metrics.aggregate(reports)
    return agg["f1_dri"], agg["f1_obs"]


def train(scenes, cfg: TrainConfig) -> TrainResult:
    """Run one training job over a scene list and return the best checkpoint.

    The scene list is split internally per the config fractions. In SEMI
    mode only the chosen fraction of training scenes ever has its human
    labels read; weak labels are used on every training scene. Per-sample
    losses in a batch are averaged before the Adam step.
    """
    root = np.random.SeedSequence(cfg.seed)
    ss_split, ss_model, ss_visible, ss_batch, ss_aug = root.spawn(5)
    train_scenes, val_scenes, _ = split_dataset(
        scenes, cfg.split, int(ss_split.generate_state(1, np.uint32)[0])
    )
    if not train_scenes or not val_scenes:
        raise ValueError("split leaves train or validation empty")

    uses_weak = cfg.mode in (TrainMode.WEAK, TrainMode.SEMI)
    uses_human = cfg.mode in (TrainMode.FULL, TrainMode.SEMI, TrainMode.BASELINE_3CLASS)
    if uses_weak and any(sc.weak is None for sc in train_scenes):
        raise ValueError(f"mode {cfg.mode.value} needs weak labels on every training scene")

    n_train = len(train_scenes)
    human_visible = [uses_human] * n_train
    if cfg.mode is TrainMode.SEMI:
        rng_vis = np.random.default_rng(ss_visible)
        chosen = rng_vis.permutation(n_train)[: int(math.floor(cfg.human_ratio * n_train + 0.5))]
        human_visible = [False] * n_train
        for i in chosen:
            human_visible[i] = True
    if uses_human and any(human_visible[i] and train_scenes[i].human_gt is None for i in range(n_train)):
        raise ValueError(f"mode {cfg.mode.value} needs human labels on its visible scenes")

    seed_model = int(ss_model.generate_state(1, np.uint32)[0])
    if cfg.mode is TrainMode.BASELINE_3CLASS:
        model = ThreeClassModel.create(seed_model, cfg.widths, cfg.input_validity_channel)
    else:
        model = DualBranchModel.create(seed_model, cfg.widths, cfg.input_validity_channel)

    rng_batch = np.random.default_rng(ss_batch)
    rng_aug = np.random.default_rng(ss_aug)
    blocks = model.blocks()
    log: list[dict] = []
    best_f1 = -1.0
    best_epoch = -1
    best_values = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng_batch.permutation(n_train)
        sums = {"dri": 0.0, "obs": 0.0}
        n_batches = 0
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            nnet.zero_grads(blocks)
            batch_dri = 0.0
            batch_obs = 0.0
            for i in batch:
                scene = train_scenes[i]
                # Hidden label sources are dropped before any processing so
                # they are never read, augmentation included.
                human = scene.human_gt if human_visible[i] else None
                weak = scene.weak if uses_weak else None
                sample = TrainScene(scene.heightmap, human, weak)
                if cfg.augment:
                    sample = augment_rotate(sample, float(rng_aug.uniform(0.0, 2.0 * math.pi)))
                if cfg.mode is TrainMode.BASELINE_3CLASS:
                    loss = model.loss(sample.heightmap, sample.human_gt)
                    batch_dri += loss
                    batch_obs += loss
                else:
                    loss_d, loss_o = model.branch_loss(
                        sample.heightmap, sample.human_gt, sample.weak, cfg.weak_weight
                    )
                    batch_dri += loss_d
                    batch_obs += loss_o
            for b in blocks:
                b.grad /= len(batch)
            step += 1
            nnet.adam_step(blocks, cfg.lr, t=step)
            sums["dri"] += batch_dri / len(batch)
            sums["obs"] += batch_obs / len(batch)
            n_batches += 1
        val_dri, val_obs = _validation_scores(model, cfg.fusion, val_scenes)
        log.append(
            {
                "epoch": epoch,
                "mode": cfg.mode.value,
                "loss_dri": sums["dri"] / n_batches,
                "loss_obs": sums["obs"] / n_batches,
                "val_f1_dri": val_dri,
                "val_f1_obs": val_obs,
            }
        )
        if val_dri > best_f1:
            best_f1 = val_dri
            best_epoch = epoch
            best_values = [b.value.copy() for b in blocks]
    assert best_values is not None
    for b, v in zip(blocks, best_values):
        b.value[...] = v
    return TrainResult(model, cfg.fusion, log, best_epoch, cfg)
