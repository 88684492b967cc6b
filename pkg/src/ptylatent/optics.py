"""Thin-sample forward model: probe, exit wave, band-limited angular spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import ComplexField, Grid, extract_patch


@dataclass(frozen=True)
class PropagationPlan:
    """Precomputed transfer function for a fixed grid and distance."""

    grid: Grid
    z: float
    transfer: np.ndarray
    band_mask: np.ndarray

    def reverse(self) -> "PropagationPlan":
        return PropagationPlan(self.grid, -self.z, np.conj(self.transfer), self.band_mask)


def band_limits(grid: Grid, z: float) -> tuple[float, float]:
    """Per-axis frequency limits beyond which the sampled transfer function aliases."""
    lam = grid.wavelength
    fx_lim = 1.0 / (lam * np.sqrt((2.0 * grid.dfx * z) ** 2 + 1.0))
    fy_lim = 1.0 / (lam * np.sqrt((2.0 * grid.dfy * z) ** 2 + 1.0))
    return fx_lim, fy_lim


def make_plan(grid: Grid, z: float) -> PropagationPlan:
    """Band-limited angular-spectrum transfer function for distance ``z`` [m].

    Evanescent components are zeroed. For ``z = 0`` the transfer is one on
    the propagating disk.
    """
    fx, fy = grid.frequencies()
    kz2 = 1.0 / grid.wavelength ** 2 - fx ** 2 - fy ** 2
    fx_lim, fy_lim = band_limits(grid, z)
    mask = (kz2 >= 0) & (np.abs(fx) <= fx_lim) & (np.abs(fy) <= fy_lim)
    phase = 2.0 * np.pi * z * np.sqrt(np.where(kz2 >= 0, kz2, 0.0))
    transfer = np.where(mask, np.exp(1j * phase), 0.0)
    mask.setflags(write=False)
    transfer.setflags(write=False)
    return PropagationPlan(grid=grid, z=float(z), transfer=transfer, band_mask=mask)


def _values(field) -> np.ndarray:
    return field.values if isinstance(field, ComplexField) else np.asarray(field)


def propagate(field, plan: PropagationPlan) -> np.ndarray:
    """``ifft2(fft2(field) * transfer)``; accepts an array or :class:`ComplexField`.

    Leading axes are treated as a batch.
    """
    if isinstance(field, ComplexField) and field.grid != plan.grid:
        raise ValueError("field grid does not match propagation plan")
    u = _values(field)
    if u.shape[-2:] != plan.grid.shape:
        raise ValueError(f"field shape {u.shape[-2:]} does not match plan grid {plan.grid.shape}")
    return np.fft.ifft2(np.fft.fft2(u) * plan.transfer)


def propagate_adjoint(grad, plan: PropagationPlan) -> np.ndarray:
    """Adjoint of :func:`propagate`, i.e. propagation with the conjugate transfer."""
    return np.fft.ifft2(np.fft.fft2(grad) * np.conj(plan.transfer))


def exit_wave(probe, obj: np.ndarray, offset) -> np.ndarray:
    """Projection approximation: probe times the object window at ``offset`` (row, col)."""
    p = _values(probe)
    return p * extract_patch(np.asarray(obj), p.shape, offset)


def intensity(field) -> np.ndarray:
    u = _values(field)
    return u.real ** 2 + u.imag ** 2


def circular_profile(grid: Grid, diameter: float, edge_width: float) -> np.ndarray:
    """Centered top-hat amplitude with a raised-cosine edge spanning ``diameter/2 +- edge_width/2``."""
    x, y = grid.coordinates()
    r = np.sqrt(x ** 2 + y ** 2)
    radius = diameter / 2.0
    if edge_width <= 0:
        return (r <= radius).astype(np.float64)
    t = np.clip((r - (radius - edge_width / 2.0)) / edge_width, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def synthesize_probe(grid: Grid, diameter: float, edge_width: float | None = None,
                     total_photons: float = 1.0) -> ComplexField:
    """Uniform-phase circular illumination normalized to ``total_photons``.

    ``edge_width`` defaults to five pixels.
    """
    if diameter <= 0 or diameter > min(grid.nx, grid.ny) * grid.pitch:
        raise ValueError(f"probe diameter {diameter} m does not fit the {grid.nx}x{grid.ny} grid")
    if not total_photons > 0:
        raise ValueError("total_photons must be positive")
    if edge_width is None:
        edge_width = 5 * grid.pitch
    amp = circular_profile(grid, diameter, edge_width)
    amp *= np.sqrt(total_photons / np.sum(amp ** 2))
    return ComplexField(grid, amp.astype(np.complex128))


def rayleigh_sommerfeld(field: np.ndarray, grid: Grid, z: float) -> np.ndarray:
    """Direct first Rayleigh-Sommerfeld summation onto the same grid (O(N^4)).

    Slow reference used to check :func:`propagate`; only practical for small
    grids.
    """
    u = np.asarray(field, dtype=np.complex128)
    k = 2.0 * np.pi / grid.wavelength
    x, y = grid.coordinates()
    xs = np.broadcast_to(x, grid.shape).ravel()
    ys = np.broadcast_to(y, grid.shape).ravel()
    src = np.flatnonzero(u.ravel())
    out = np.zeros(u.size, dtype=np.complex128)
    area = grid.pitch ** 2
    for i in src:
        r = np.sqrt((xs - xs[i]) ** 2 + (ys - ys[i]) ** 2 + z ** 2)
        h = z / (2.0 * np.pi * r ** 2) * (1.0 / r - 1j * k) * np.exp(1j * k * r)
        out += u.ravel()[i] * h * area
    return out.reshape(grid.shape)
