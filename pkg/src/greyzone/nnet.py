"""Minimal differentiable network engine.

A fixed layer vocabulary (3x3 same-size convolution, ReLU, 2x2 max pool,
2x nearest upsample) with hand-written backward passes, a masked
cross-entropy fused with the softmax, Adam, and a central-difference
gradient checker. Everything is float64 and deterministic: accumulation
order is row-major and ties in the pool argmax go to the first maximum.

Tensors are plain numpy arrays shaped (channels, rows, cols).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grids import Label, LabelMap

MAGIC = b"GZN1"


@dataclass
class ParamBlock:
    """One learnable array with its gradient and Adam-moment shadows."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float64)
        for attr in ("grad", "m", "v"):
            if getattr(self, attr) is None:
                setattr(self, attr, np.zeros_like(self.value))


def zero_grads(blocks) -> None:
    for b in blocks:
        b.grad[...] = 0.0


class Conv2d:
    """3x3 cross-correlation, stride 1, zero padding 1 (same-size output)."""

    def __init__(self, in_channels: int, out_channels: int, rng=None, zero_init: bool = False):
        self.in_channels = in_channels
        self.out_channels = out_channels
        if zero_init:
            w = np.zeros((out_channels, in_channels, 3, 3))
        else:
            if rng is None:
                raise ValueError("rng required unless zero_init")
            w = rng.normal(0.0, np.sqrt(2.0 / (in_channels * 9)), (out_channels, in_channels, 3, 3))
        self.weight = ParamBlock("weight", w)
        self.bias = ParamBlock("bias", np.zeros(out_channels))
        self._cols: np.ndarray | None = None
        self._shape: tuple[int, int] | None = None

    def blocks(self):
        return [self.weight, self.bias]

    def _im2col(self, x: np.ndarray) -> np.ndarray:
        c, r, s = x.shape
        padded = np.zeros((c, r + 2, s + 2))
        padded[:, 1 : r + 1, 1 : s + 1] = x
        cols = np.empty((c, 3, 3, r, s))
        for di in range(3):
            for dj in range(3):
                cols[:, di, dj] = padded[:, di : di + r, dj : dj + s]
        return cols.reshape(c * 9, r * s)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[0]}")
        _, r, s = x.shape
        self._cols = self._im2col(x)
        self._shape = (r, s)
        wmat = self.weight.value.reshape(self.out_channels, -1)
        out = wmat @ self._cols + self.bias.value[:, None]
        return out.reshape(self.out_channels, r, s)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        assert self._cols is not None and self._shape is not None
        r, s = self._shape
        gmat = gy.reshape(self.out_channels, r * s)
        self.weight.grad += (gmat @ self._cols.T).reshape(self.weight.value.shape)
        self.bias.grad += gy.sum(axis=(1, 2))
        wmat = self.weight.value.reshape(self.out_channels, -1)
        gcols = (wmat.T @ gmat).reshape(self.in_channels, 3, 3, r, s)
        gpad = np.zeros((self.in_channels, r + 2, s + 2))
        for di in range(3):
            for dj in range(3):
                gpad[:, di : di + r, dj : dj + s] += gcols[:, di, dj]
        return gpad[:, 1 : r + 1, 1 : s + 1]


class ReLU:
    def __init__(self):
        self._mask: np.ndarray | None = None

    def blocks(self):
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, gy, 0.0)


class MaxPool2x2:
    """2x2 stride-2 max pooling; backward routes to the (first) argmax."""

    def __init__(self):
        self._argmax: np.ndarray | None = None
        self._shape: tuple[int, int, int] | None = None

    def blocks(self):
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        c, r, s = x.shape
        if r % 2 or s % 2:
            raise ValueError("pooling needs even spatial extents")
        self._shape = (c, r, s)
        tiles = x.reshape(c, r // 2, 2, s // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, r // 2, s // 2, 4)
        self._argmax = tiles.argmax(axis=3)
        return tiles.max(axis=3)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        c, r, s = self._shape
        routed = np.zeros((c, r // 2, s // 2, 4))
        np.put_along_axis(routed, self._argmax[..., None], gy[..., None], axis=3)
        return routed.reshape(c, r // 2, s // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, r, s)


class Upsample2x:
    """Nearest-neighbor 2x duplication; backward sums each 2x2 block."""

    def blocks(self):
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        c, r, s = gy.shape
        return gy.reshape(c, r // 2, 2, s // 2, 2).sum(axis=(2, 4))


class Stack:
    """A plain sequential container over the layer vocabulary."""

    def __init__(self, layers):
        self.layers = list(layers)

    def blocks(self):
        out = []
        for layer in self.layers:
            out.extend(layer.blocks())
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, gy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy

    def zero_grads(self) -> None:
        zero_grads(self.blocks())


def softmax(logits: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the channel axis, max-subtracted for stability."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax2(logits: np.ndarray) -> np.ndarray:
    if logits.shape[0] != 2:
        raise ValueError(f"softmax2 expects 2 channels, got {logits.shape[0]}")
    return softmax(logits)


def masked_cross_entropy_channels(
    probs: np.ndarray, channel_target: np.ndarray, mask: np.ndarray, weight: float
) -> tuple[float, np.ndarray]:
    """Mean NLL over masked-in pixels; gradient is w.r.t. the logits.

    The softmax backward is fused in: grad = weight * (p - onehot) / N at
    contributing pixels and exactly zero elsewhere. An empty mask yields
    loss 0 with zero gradient.
    """
    n = int(mask.sum())
    grad = np.zeros_like(probs)
    if n == 0:
        return 0.0, grad
    picked = np.take_along_axis(probs, channel_target[None], axis=0)[0]
    loss = -weight * float(np.log(np.maximum(picked[mask], 1e-300)).sum()) / n
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, channel_target[None], 1.0, axis=0)
    grad = weight * (probs - onehot) / n
    grad *= mask[None]
    return loss, grad


def masked_cross_entropy(
    probs: np.ndarray, target: LabelMap, positive: Label, weight: float
) -> tuple[float, np.ndarray]:
    """Binary branch loss: the positive label maps to channel 0.

    Targets must come from a branch-target remap, i.e. hold only
    {unknown, drivable, obstacle}; unknown pixels contribute nothing.
    """
    codes = target.labels if isinstance(target, LabelMap) else np.asarray(target)
    if (codes == Label.GRE).any():
        raise ValueError("branch targets must not contain grey pixels")
    mask = codes != Label.UNK
    channel = np.where(codes == positive, 0, 1)
    return masked_cross_entropy_channels(probs, channel, mask, weight)


def adam_step(
    blocks,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> None:
    """One bias-corrected Adam update, in place, from the blocks' gradients."""
    if t < 1:
        raise ValueError("step index starts at 1")
    for b in blocks:
        if b.grad.shape != b.value.shape:
            raise ValueError(f"{b.name}: gradient shape mismatch")
        b.m[...] = beta1 * b.m + (1 - beta1) * b.grad
        b.v[...] = beta2 * b.v + (1 - beta2) * b.grad**2
        m_hat = b.m / (1 - beta1**t)
        v_hat = b.v / (1 - beta2**t)
        b.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_block: str
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(loss_and_grad, blocks, tolerance: float = 1e-4, step: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_and_grad()`` must return the scalar loss and leave the gradient
    of every block populated (it is responsible for zeroing first). Only
    meant for tiny networks: cost is two loss evaluations per parameter.
    """
    blocks = list(blocks)
    loss_and_grad()
    analytic = [b.grad.copy() for b in blocks]
    worst = 0.0
    worst_block = ""
    n = 0
    for b, g in zip(blocks, analytic):
        flat = b.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_and_grad()
            flat[i] = keep - step
            down = loss_and_grad()
            flat[i] = keep
            numeric = (up - down) / (2 * step)
            rel = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-6)
            if rel > worst:
                worst = rel
                worst_block = f"{b.name}[{i}]"
            n += 1
    loss_and_grad()  # restore a consistent gradient state
    return GradCheckReport(worst, worst_block, n, tolerance)


def pack_blocks(blocks) -> bytes:
    """Serialize blocks: count, per-block shape table, then raw LE float64."""
    blocks = list(blocks)
    out = [struct.pack("<I", len(blocks))]
    for b in blocks:
        out.append(struct.pack("<I", b.value.ndim))
        out.append(struct.pack(f"<{b.value.ndim}I", *b.value.shape))
    for b in blocks:
        out.append(b.value.astype("<f8").tobytes())
    return b"".join(out)


def unpack_blocks(buf: bytes, offset: int = 0) -> tuple[list[np.ndarray], int]:
    """Inverse of :func:`pack_blocks`; returns the arrays and the end offset."""
    (count,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, offset)
        offset += 4 * ndim
        shapes.append(shape)
    arrays = []
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=offset).reshape(shape).copy()
        offset += 8 * size
        arrays.append(arr)
    return arrays, offset


def write_params(path, blocks) -> None:
    """Standalone parameter file: magic bytes then the packed block table."""
    from .pgmio import atomic_write_bytes

    atomic_write_bytes(path, MAGIC + pack_blocks(blocks))


def read_params(path) -> list[np.ndarray]:
    from pathlib import Path

    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic bytes")
    arrays, _ = unpack_blocks(buf, 4)
    return arrays
