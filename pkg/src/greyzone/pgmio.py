"""Binary PGM/PPM readers and writers.

8-bit and 16-bit P5 grayscale plus 8-bit P6 color. 16-bit samples are
big-endian per the netpbm convention. Writes are atomic (temp file +
rename) so partially written grids never appear under the final name.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _encode_pgm(arr: np.ndarray, maxval: int) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise ValueError(f"pixel values exceed maxval {maxval}")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval < 256:
        body = arr.astype(np.uint8).tobytes()
    else:
        body = arr.astype(">u2").tobytes()
    return header + body


def write_pgm(path: str | Path, arr: np.ndarray, maxval: int = 255) -> None:
    atomic_write_bytes(path, _encode_pgm(arr, maxval))


def _tokens(data: bytes, count: int, start: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated ASCII integers, skipping # comments."""
    out: list[int] = []
    i = start
    n = len(data)
    while len(out) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] != ord("\n"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated netpbm header")
        out.append(int(data[i:j]))
        i = j
    return out, i + 1  # consume the single whitespace after the last token


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    (width, height, maxval), offset = _tokens(data, 3, 2)
    count = width * height
    if maxval < 256:
        arr = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
    else:
        arr = np.frombuffer(data, dtype=">u2", count=count, offset=offset).astype(np.uint16)
    return arr.reshape(height, width).copy(), maxval


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM data must be (rows, cols, 3)")
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + rgb.astype(np.uint8).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    (width, height, maxval), offset = _tokens(data, 3, 2)
    if maxval != 255:
        raise ValueError("only 8-bit PPM supported")
    arr = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=offset)
    return arr.reshape(height, width, 3).copy()
