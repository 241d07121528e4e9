"""Dual-branch segmentation model, loss assembly, and score fusion.

Two structurally identical fully convolutional branches: one learns a
drivable-vs-rest surface (output S1), the other an obstacle-vs-rest
surface (S2). Ambiguous grey terrain is never a training target; each
branch absorbs it into its negative class, and at inference the two
probability grids are fused into a single traversability score plus
discrete labels. A flat three-class variant is included as a baseline
training mode.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nnet
from .grids import BranchId, CostMap, HeightMap, Label, LabelMap, Role, build_target_map
from .pgmio import atomic_write_bytes

DEFAULT_WIDTHS = (16, 32, 32, 16)
DOWNSAMPLE_FACTOR = 4


@dataclass(frozen=True)
class FusionConfig:
    """Probability thresholds for the drivable (alpha1) and obstacle (alpha2) cases."""

    alpha1: float = 0.5
    alpha2: float = 0.5

    def __post_init__(self) -> None:
        for a in (self.alpha1, self.alpha2):
            if not 0.0 < a < 1.0:
                raise ValueError("fusion thresholds must lie strictly inside (0, 1)")


def build_segmentation_stack(in_channels: int, widths, out_channels: int, rng) -> nnet.Stack:
    """Encoder/decoder FCN: two pooled conv stages, one bottleneck, two
    upsampled stages. The final convolution starts at zero so an untrained
    stack outputs uniform probabilities."""
    w0, w1, w2, w3 = widths
    return nnet.Stack(
        [
            nnet.Conv2d(in_channels, w0, rng),
            nnet.ReLU(),
            nnet.MaxPool2x2(),
            nnet.Conv2d(w0, w1, rng),
            nnet.ReLU(),
            nnet.MaxPool2x2(),
            nnet.Conv2d(w1, w2, rng),
            nnet.ReLU(),
            nnet.Upsample2x(),
            nnet.Conv2d(w2, w3, rng),
            nnet.ReLU(),
            nnet.Upsample2x(),
            nnet.Conv2d(w3, out_channels, zero_init=True),
        ]
    )


def _check_extents(hmap: HeightMap) -> None:
    if hmap.rows % DOWNSAMPLE_FACTOR or hmap.cols % DOWNSAMPLE_FACTOR:
        raise ValueError(
            f"grid extents {hmap.rows}x{hmap.cols} must be divisible by {DOWNSAMPLE_FACTOR}"
        )


class DualBranchModel:
    """Two independent branches sharing an architecture but never parameters."""

    kind = "dual"

    def __init__(self, dri: nnet.Stack, obs: nnet.Stack, widths, input_validity_channel: bool = True):
        self.dri = dri
        self.obs = obs
        self.widths = tuple(widths)
        self.input_validity_channel = input_validity_channel

    @classmethod
    def create(cls, seed: int = 0, widths=DEFAULT_WIDTHS, input_validity_channel: bool = True):
        rng = np.random.default_rng(seed)
        in_ch = 2 if input_validity_channel else 1
        dri = build_segmentation_stack(in_ch, widths, 2, rng)
        obs = build_segmentation_stack(in_ch, widths, 2, rng)
        return cls(dri, obs, widths, input_validity_channel)

    @property
    def in_channels(self) -> int:
        return 2 if self.input_validity_channel else 1

    def blocks(self):
        return self.dri.blocks() + self.obs.blocks()

    def zero_grads(self) -> None:
        nnet.zero_grads(self.blocks())

    def input_tensor(self, hmap: HeightMap) -> np.ndarray:
        """Normalized height plus (by default) the validity flag as a channel.

        Without the validity channel an unobserved cell is indistinguishable
        from a cell at the bottom of the height window.
        """
        h = hmap.height.astype(np.float64) / 255.0
        if self.input_validity_channel:
            return np.stack([h, hmap.valid.astype(np.float64)])
        return h[None]

    def forward(self, hmap: HeightMap) -> tuple[np.ndarray, np.ndarray]:
        """Probability grids: S1 = P(drivable), S2 = P(obstacle)."""
        _check_extents(hmap)
        x = self.input_tensor(hmap)
        s1 = nnet.softmax2(self.dri.forward(x))[0]
        s2 = nnet.softmax2(self.obs.forward(x))[0]
        return s1, s2

    def branch_loss(
        self,
        hmap: HeightMap,
        human_gt: LabelMap | None = None,
        weak: LabelMap | None = None,
        weak_weight: float = 0.4,
    ) -> tuple[float, float]:
        """Per-branch loss for one sample; gradients accumulate into the blocks.

        Human targets contribute at weight 1, weak targets at ``weak_weight``;
        a sample may carry either source or both. Each branch does a single
        forward pass and backpropagates the summed logit gradient.
        """
        if human_gt is None and weak is None:
            raise ValueError("at least one label source required")
        _check_extents(hmap)
        x = self.input_tensor(hmap)
        losses = []
        for stack, branch in ((self.dri, BranchId.DRI_BRANCH), (self.obs, BranchId.OBS_BRANCH)):
            logits = stack.forward(x)
            probs = nnet.softmax2(logits)
            total = 0.0
            grad = np.zeros_like(logits)
            if human_gt is not None:
                target = build_target_map(human_gt, hmap.valid, branch, weak=False)
                loss, g = nnet.masked_cross_entropy(probs, target, branch.positive, 1.0)
                total += loss
                grad += g
            if weak is not None:
                target = build_target_map(weak, hmap.valid, branch, weak=True)
                loss, g = nnet.masked_cross_entropy(probs, target, branch.positive, weak_weight)
                total += loss
                grad += g
            stack.backward(grad)
            losses.append(total)
        return losses[0], losses[1]

    def predict(self, hmap: HeightMap, fusion: FusionConfig) -> tuple[CostMap, LabelMap]:
        s1, s2 = self.forward(hmap)
        return fuse(s1, s2, fusion, valid=hmap.valid)


def fuse(
    s1: np.ndarray, s2: np.ndarray, cfg: FusionConfig, valid: np.ndarray | None = None
) -> tuple[CostMap, LabelMap]:
    """Combine the branch probabilities into a score map and discrete labels.

    Strict inequalities: a pixel is drivable when S1 clears alpha1 while S2
    stays below alpha2 (score S1), obstacle in the mirrored case (score
    1 - S2), and grey otherwise with score (1-S2)/((1-S1)+(1-S2)). Both
    probabilities at exactly 1 would make the grey ratio 0/0; that pixel
    scores 0.5. Invalid pixels are forced to unknown with score 0.
    """
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.shape != s2.shape:
        raise ValueError("S1/S2 shape mismatch")
    dri = (s1 > cfg.alpha1) & (s2 < cfg.alpha2)
    obs = (s2 > cfg.alpha2) & (s1 < cfg.alpha1)
    denom = (1.0 - s1) + (1.0 - s2)
    grey_score = np.where(denom > 0.0, (1.0 - s2) / np.where(denom > 0.0, denom, 1.0), 0.5)
    score = np.where(dri, s1, np.where(obs, 1.0 - s2, grey_score))
    labels = np.where(dri, np.uint8(Label.DRI), np.where(obs, np.uint8(Label.OBS), np.uint8(Label.GRE)))
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        labels = np.where(valid, labels, np.uint8(Label.UNK))
        score = np.where(valid, score, 0.0)
    return CostMap(score, s1, s2), LabelMap(labels, Role.PREDICTION)


class ThreeClassModel:
    """Baseline: one branch, flat 3-way classification with grey as a class."""

    kind = "3class"
    CHANNEL_LABELS = (Label.DRI, Label.OBS, Label.GRE)

    def __init__(self, stack: nnet.Stack, widths, input_validity_channel: bool = True):
        self.stack = stack
        self.widths = tuple(widths)
        self.input_validity_channel = input_validity_channel

    @classmethod
    def create(cls, seed: int = 0, widths=DEFAULT_WIDTHS, input_validity_channel: bool = True):
        rng = np.random.default_rng(seed)
        in_ch = 2 if input_validity_channel else 1
        return cls(build_segmentation_stack(in_ch, widths, 3, rng), widths, input_validity_channel)

    def blocks(self):
        return self.stack.blocks()

    def zero_grads(self) -> None:
        nnet.zero_grads(self.blocks())

    input_tensor = DualBranchModel.input_tensor

    def forward(self, hmap: HeightMap) -> np.ndarray:
        _check_extents(hmap)
        return nnet.softmax(self.stack.forward(self.input_tensor(hmap)))

    def loss(self, hmap: HeightMap, human_gt: LabelMap) -> float:
        """Unknown-masked 3-way cross entropy on human labels; accumulates grads."""
        _check_extents(hmap)
        logits = self.stack.forward(self.input_tensor(hmap))
        probs = nnet.softmax(logits)
        codes = human_gt.labels
        mask = codes != Label.UNK
        channel = np.zeros_like(codes, dtype=np.int64)
        for ch, label in enumerate(self.CHANNEL_LABELS):
            channel[codes == label] = ch
        loss, grad = nnet.masked_cross_entropy_channels(probs, channel, mask, 1.0)
        self.stack.backward(grad)
        return loss

    def predict(self, hmap: HeightMap, fusion: FusionConfig | None = None) -> tuple[CostMap, LabelMap]:
        """Argmax labels; ties break toward the lowest label code. The score
        map mirrors P(drivable) so baseline outputs render like fused ones."""
        probs = self.forward(hmap)
        channel = probs.argmax(axis=0)
        codes = np.array([int(l) for l in self.CHANNEL_LABELS], dtype=np.uint8)[channel]
        codes = np.where(hmap.valid, codes, np.uint8(Label.UNK))
        score = np.where(hmap.valid, probs[0], 0.0)
        cost = CostMap(score, probs[0], probs[1])
        return cost, LabelMap(codes, Role.PREDICTION)


class CheckpointError(ValueError):
    pass


_SECTION_TAGS = {"dual": (b"DRI ", b"OBS "), "3class": (b"3CL ",)}


def save_checkpoint(path, model, fusion: FusionConfig) -> None:
    """Single-file checkpoint: magic, JSON header, tagged parameter sections."""
    header = {
        "kind": model.kind,
        "widths": list(model.widths),
        "input_validity_channel": model.input_validity_channel,
        "alpha1": fusion.alpha1,
        "alpha2": fusion.alpha2,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [nnet.MAGIC, struct.pack("<I", len(hbytes)), hbytes]
    if model.kind == "dual":
        sections = [model.dri.blocks(), model.obs.blocks()]
    else:
        sections = [model.stack.blocks()]
    for tag, blocks in zip(_SECTION_TAGS[model.kind], sections):
        out.append(tag)
        out.append(nnet.pack_blocks(blocks))
    atomic_write_bytes(path, b"".join(out))


def load_checkpoint(path):
    """Rebuild the model and fusion config saved by :func:`save_checkpoint`."""
    buf = Path(path).read_bytes()
    if buf[:4] != nnet.MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    (hlen,) = struct.unpack_from("<I", buf, 4)
    header = json.loads(buf[8 : 8 + hlen].decode("utf-8"))
    offset = 8 + hlen
    kind = header["kind"]
    widths = tuple(header["widths"])
    validity = bool(header["input_validity_channel"])
    if kind == "dual":
        model = DualBranchModel.create(0, widths, validity)
        sections = [model.dri.blocks(), model.obs.blocks()]
    elif kind == "3class":
        model = ThreeClassModel.create(0, widths, validity)
        sections = [model.stack.blocks()]
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    for tag, blocks in zip(_SECTION_TAGS[kind], sections):
        if buf[offset : offset + 4] != tag:
            raise CheckpointError(f"{path}: missing section {tag!r}")
        offset += 4
        arrays, offset = nnet.unpack_blocks(buf, offset)
        if len(arrays) != len(blocks):
            raise CheckpointError("checkpoint block count mismatch")
        for blk, arr in zip(blocks, arrays):
            if blk.value.shape != arr.shape:
                raise CheckpointError("checkpoint shape table mismatch")
            blk.value[...] = arr
    return model, FusionConfig(header["alpha1"], header["alpha2"])
