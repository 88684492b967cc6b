"""Binary 8-bit PGM (P5) images."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def to_u8(img, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Map ``[lo, hi]`` linearly onto 0..255 with clipping and round-half-even."""
    if hi <= lo:
        raise ValueError("need hi > lo")
    a = (np.asarray(img, dtype=np.float64) - lo) / (hi - lo)
    return np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, img, lo: float = 0.0, hi: float = 1.0) -> None:
    data = img if np.asarray(img).dtype == np.uint8 else to_u8(img, lo, hi)
    if data.ndim != 2:
        raise ValueError("PGM images are 2-D")
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(data).tobytes())


def read_pgm(path) -> np.ndarray:
    """8-bit P5 image as uint8; comments in the header are skipped."""
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(buf) and not buf[end:end + 1].isspace():
            end += 1
        fields.append(buf[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P5 image")
    w, h = int(fields[1]), int(fields[2])
    data = buf[pos + 1:]
    if len(data) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, np.uint8).reshape(h, w).copy()
