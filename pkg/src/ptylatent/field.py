"""Sampling grids, patch embedding and Mitchell-Netravali resampling.

Arrays are indexed ``[row, col]`` = ``[y, x]`` throughout the package, so a
grid with ``nx`` columns and ``ny`` rows holds arrays of shape ``(ny, nx)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Mitchell-Netravali parameters (B + 2C = 1 gives a partition of unity).
MITCHELL_B = 1.0 / 3.0
MITCHELL_C = 1.0 / 3.0


@dataclass(frozen=True)
class Grid:
    """Uniform square-pixel sampling grid with its illumination wavelength.

    Parameters
    ----------
    nx, ny : int
        Number of columns and rows.
    pitch : float
        Pixel pitch [m].
    wavelength : float
        Wavelength [m].
    """

    nx: int
    ny: int
    pitch: float
    wavelength: float

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("grid sizes must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def dfx(self) -> float:
        return 1.0 / (self.nx * self.pitch)

    @property
    def dfy(self) -> float:
        return 1.0 / (self.ny * self.pitch)

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Return broadcastable ``(fx, fy)`` in FFT order, shapes (1, nx) and (ny, 1)."""
        fx = np.fft.fftfreq(self.nx, d=self.pitch)[None, :]
        fy = np.fft.fftfreq(self.ny, d=self.pitch)[:, None]
        return fx, fy

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates [m] with index ``n // 2`` at the origin."""
        x = (np.arange(self.nx) - self.nx // 2) * self.pitch
        y = (np.arange(self.ny) - self.ny // 2) * self.pitch
        return x[None, :], y[:, None]


@dataclass(frozen=True)
class ComplexField:
    """A complex field sampled on ``grid``; ``|values|**2`` is photons/pixel."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.shape != self.grid.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def photons(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))


def check_transmission(img: np.ndarray) -> np.ndarray:
    """Validate an amplitude-transmission image (finite, within [0, 1])."""
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("transmission values must lie in [0, 1]")
    return img


def mitchell_kernel(x, b: float = MITCHELL_B, c: float = MITCHELL_C):
    """Piecewise-cubic Mitchell-Netravali kernel, zero for ``|x| >= 2``."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2 = ax * ax
    ax3 = ax2 * ax
    inner = (12 - 9 * b - 6 * c) * ax3 + (-18 + 12 * b + 6 * c) * ax2 + (6 - 2 * b)
    outer = (-b - 6 * c) * ax3 + (6 * b + 30 * c) * ax2 + (-12 * b - 48 * c) * ax + (8 * b + 24 * c)
    out = np.where(ax < 1.0, inner, np.where(ax < 2.0, outer, 0.0)) / 6.0
    return out if out.ndim else float(out)


@lru_cache(maxsize=64)
def _resize_matrix_cached(n_in: int, n_out: int) -> np.ndarray:
    if n_in == n_out:
        return np.eye(n_in)
    scale = n_in / n_out
    # widen the kernel when shrinking so it low-passes before decimation
    support = max(scale, 1.0)
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    lo = np.floor(src - 2.0 * support).astype(int)
    taps = int(np.ceil(4.0 * support)) + 2
    idx = lo[:, None] + np.arange(taps)[None, :]
    w = mitchell_kernel((src[:, None] - idx) / support)
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    mat.setflags(write=False)
    return mat


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense 1-D resampling matrix of shape ``(n_out, n_in)``.

    Edges are clamped and each row is renormalized to sum to one. Equal sizes
    return the identity.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resize sizes must be positive, got {n_in} -> {n_out}")
    return _resize_matrix_cached(int(n_in), int(n_out))


def resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Separable Mitchell-Netravali resize of a 2-D image to ``(out_h, out_w)``."""
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("resize expects a nonempty 2-D image")
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    ry = resize_matrix(img.shape[0], out_h)
    rx = resize_matrix(img.shape[1], out_w)
    return ry @ img @ rx.T


def resize_adjoint(grad_out: np.ndarray, in_w: int, in_h: int) -> np.ndarray:
    """Transpose of :func:`resize` for an input of size ``(in_h, in_w)``."""
    grad_out = np.asarray(grad_out)
    if grad_out.ndim != 2:
        raise ValueError("resize_adjoint expects a 2-D array")
    out_h, out_w = grad_out.shape
    ry = resize_matrix(in_h, out_h)
    rx = resize_matrix(in_w, out_w)
    return ry.T @ grad_out @ rx


def _check_offset(canvas_shape, patch_shape, offset) -> tuple[int, int]:
    r, c = (int(v) for v in offset)
    if r != offset[0] or c != offset[1]:
        raise ValueError(f"offset must be integral, got {offset}")
    ph, pw = patch_shape
    if r < 0 or c < 0 or r + ph > canvas_shape[0] or c + pw > canvas_shape[1]:
        raise IndexError(f"patch {patch_shape} at offset {(r, c)} exceeds canvas {canvas_shape}")
    return r, c


def extract_patch(canvas: np.ndarray, shape: tuple[int, int], offset) -> np.ndarray:
    """Return a copy of the ``shape`` window whose top-left corner is at ``offset`` (row, col)."""
    r, c = _check_offset(canvas.shape, shape, offset)
    return canvas[r:r + shape[0], c:c + shape[1]].copy()


def embed_patch(canvas: np.ndarray, patch: np.ndarray, offset, multiply: bool = False) -> np.ndarray:
    """Copy of ``canvas`` with ``patch`` written (or multiplied) in at ``offset``."""
    canvas = np.asarray(canvas)
    patch = np.asarray(patch)
    r, c = _check_offset(canvas.shape, patch.shape, offset)
    out = canvas.astype(np.result_type(canvas, patch), copy=True)
    window = (slice(r, r + patch.shape[0]), slice(c, c + patch.shape[1]))
    if multiply:
        out[window] *= patch
    else:
        out[window] = patch
    return out
