"""PTYB array container and flat ``key=value`` text files.

Layout: magic ``PTYB1``, u8 dtype code, u8 ndim, ``ndim`` little-endian u64
extents, then the raw little-endian C-order payload.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTYB1"
DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<c16"), 3: np.dtype("u1")}
CODE_FOR_KIND = {"f": 1, "c": 2, "u": 3}


class PtybError(ValueError):
    pass


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        code = 3
    elif np.iscomplexobj(arr):
        code = 2
    elif arr.dtype.kind in "fiub":
        code = 1
    else:
        raise PtybError(f"unsupported dtype {arr.dtype}")
    data = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code])
    if arr.ndim > 255:
        raise PtybError("too many dimensions")
    head = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + data.tobytes()


def decode(buf: bytes) -> np.ndarray:
    if buf[:5] != MAGIC:
        raise PtybError("bad PTYB magic")
    if len(buf) < 7:
        raise PtybError("truncated PTYB header")
    code, ndim = struct.unpack_from("<BB", buf, 5)
    if code not in DTYPE_CODES:
        raise PtybError(f"unknown dtype code {code}")
    off = 7 + 8 * ndim
    if len(buf) < off:
        raise PtybError("truncated PTYB header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 7)
    dtype = DTYPE_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) != off + nbytes:
        raise PtybError(f"payload is {len(buf) - off} bytes, expected {nbytes}")
    return np.frombuffer(buf, dtype=dtype, offset=off).reshape(shape).astype(dtype.newbyteorder("="))


def save(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode(arr))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def write_keyvalues(path, items: dict) -> None:
    lines = [f"{k}={format_value(v)}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalues(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out
