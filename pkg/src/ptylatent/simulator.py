"""Diffraction data synthesis: noiseless forward stacks, shot and readout noise, persistence."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import ptyb
from .field import ComplexField, Grid
from .optics import PropagationPlan, exit_wave, intensity, propagate


@dataclass(frozen=True)
class DiffractionStack:
    """Measured (or simulated) frames with their readout-noise variance.

    ``frames`` has shape ``(J, ny, nx)`` in photons/pixel, ``noise_var`` is the
    per-pixel readout variance, and ``positions_px`` the ``(J, 2)`` top-left
    ``(row, col)`` offsets of the probe window in the object canvas.
    """

    frames: np.ndarray
    noise_var: np.ndarray
    positions_px: np.ndarray
    grid: Grid
    z: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        pos = np.asarray(self.positions_px, dtype=np.int64).reshape(-1, 2)
        var = np.broadcast_to(np.asarray(self.noise_var, dtype=np.float64), self.grid.shape).copy()
        if frames.ndim != 3 or frames.shape[1:] != self.grid.shape:
            raise ValueError(f"frames shape {frames.shape} does not match grid {self.grid.shape}")
        if len(frames) != len(pos) or len(pos) < 1:
            raise ValueError("need one position per frame and at least one frame")
        if np.any(var < 0):
            raise ValueError("noise variance must be nonnegative")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "positions_px", pos)
        object.__setattr__(self, "noise_var", var)

    @property
    def count(self) -> int:
        return len(self.frames)


def frame_rng(seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream for frame ``index``; serial and parallel draws agree."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def derive_seed(seed: int, label: str) -> int:
    """Sub-seed from ``sha256(f"{seed}:{label}")`` (first 8 bytes, little-endian)."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def expected_stack(obj, probe, positions_px, plan: PropagationPlan) -> DiffractionStack:
    """Noiseless intensities ``|propagate(probe * object_patch)|**2`` per scan position."""
    obj = obj.values if isinstance(obj, ComplexField) else np.asarray(obj)
    p = probe.values if isinstance(probe, ComplexField) else np.asarray(probe)
    if p.shape != plan.grid.shape:
        raise ValueError("probe does not match the propagation grid")
    pos = np.asarray(positions_px, dtype=np.int64).reshape(-1, 2)
    frames = np.empty((len(pos),) + plan.grid.shape)
    for j, off in enumerate(pos):
        frames[j] = intensity(propagate(exit_wave(p, obj, tuple(off)), plan))
    return DiffractionStack(frames, 0.0, pos, plan.grid, plan.z)


def apply_noise(stack: DiffractionStack, sigma_readout: float, seed: int,
                clip: bool = False) -> DiffractionStack:
    """Poisson shot noise on each expected frame plus Gaussian readout noise.

    Negative values from the readout term are kept unless ``clip`` is set.
    """
    if sigma_readout < 0:
        raise ValueError("readout sigma must be nonnegative")
    noisy = np.empty_like(stack.frames)
    for j, frame in enumerate(stack.frames):
        rng = frame_rng(seed, j)
        counts = rng.poisson(np.maximum(frame, 0.0)).astype(np.float64)
        if sigma_readout > 0:
            counts += rng.normal(0.0, sigma_readout, size=frame.shape)
        noisy[j] = counts
    if clip:
        np.maximum(noisy, 0.0, out=noisy)
    return replace(stack, frames=noisy, noise_var=np.full(stack.grid.shape, sigma_readout ** 2))


def scale_to_photons(probe, total: float):
    """Rescale a probe so that ``sum |P|**2 == total``; returns the same type it was given."""
    if not total > 0:
        raise ValueError("photon total must be positive")
    values = probe.values if isinstance(probe, ComplexField) else np.asarray(probe, dtype=np.complex128)
    power = float(np.sum(np.abs(values) ** 2))
    if power == 0:
        raise ValueError("cannot scale an all-zero probe")
    scaled = values * np.sqrt(total / power)
    return ComplexField(probe.grid, scaled) if isinstance(probe, ComplexField) else scaled


def darkframes_to_var(frames: np.ndarray) -> np.ndarray:
    """Per-pixel readout variance estimated from a stack of dark frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or len(frames) < 2:
        raise ValueError("need a (K, ny, nx) stack with K >= 2 dark frames")
    return frames.var(axis=0, ddof=1)


# bundle I/O -------------------------------------------------------------

def write_stack(directory, stack: DiffractionStack, seed: int | None = None, **extra) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ptyb.save(d / "frames.ptyb", stack.frames)
    ptyb.save(d / "noise_var.ptyb", stack.noise_var)
    with open(d / "positions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "row_px", "col_px"])
        for i, (r, c) in enumerate(stack.positions_px):
            w.writerow([i, int(r), int(c)])
    meta = {
        "wavelength_m": stack.grid.wavelength,
        "pitch_m": stack.grid.pitch,
        "z_m": stack.z,
        "nx": stack.grid.nx,
        "ny": stack.grid.ny,
    }
    if seed is not None:
        meta["seed"] = int(seed)
    meta.update(extra)
    ptyb.write_keyvalues(d / "meta.txt", meta)


def read_stack(directory) -> DiffractionStack:
    d = Path(directory)
    meta = ptyb.read_keyvalues(d / "meta.txt")
    grid = Grid(int(meta["nx"]), int(meta["ny"]), float(meta["pitch_m"]), float(meta["wavelength_m"]))
    with open(d / "positions.csv", newline="") as fh:
        pos = [(int(r["row_px"]), int(r["col_px"])) for r in csv.DictReader(fh)]
    return DiffractionStack(ptyb.load(d / "frames.ptyb"), ptyb.load(d / "noise_var.ptyb"),
                            np.array(pos), grid, float(meta["z_m"]))
