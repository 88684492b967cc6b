"""Simulation geometry shared by the commands: probe, scan, canvas, ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ptyb
from .config import RunConfig
from .field import Grid, resize
from .optics import PropagationPlan, make_plan, synthesize_probe
from .pgm import read_pgm
from .recon import Pipeline
from .scan import ScanPattern, fermat_for_overlap, poisson_disk_count
from .simulator import derive_seed


@dataclass
class Scene:
    grid: Grid
    plan: PropagationPlan
    probe: np.ndarray
    pattern: ScanPattern
    positions_px: np.ndarray
    canvas_shape: tuple[int, int]
    digit_size: tuple[int, int]
    digit_offset: tuple[int, int]

    def digit_region(self, canvas: np.ndarray) -> np.ndarray:
        r, c = self.digit_offset
        return canvas[r:r + self.digit_size[0], c:c + self.digit_size[1]]

    def object_canvas(self, image, background: float = 0.0) -> np.ndarray:
        """Ground-truth amplitude canvas: ``image`` resized into the digit region, clipped to [0, 1]."""
        image = np.asarray(image, dtype=np.float64)
        small = np.clip(resize(image, self.digit_size[1], self.digit_size[0]), 0.0, 1.0)
        canvas = np.full(self.canvas_shape, float(background))
        r, c = self.digit_offset
        canvas[r:r + self.digit_size[0], c:c + self.digit_size[1]] = small
        return canvas

    def pipeline(self, noise_var, decoder=None, probe=None) -> Pipeline:
        return Pipeline(
            probe=self.probe if probe is None else probe,
            plan=self.plan,
            positions_px=self.positions_px,
            noise_var=noise_var,
            object_shape=self.canvas_shape,
            decoder=decoder,
            digit_size=self.digit_size if decoder is not None else None,
            digit_offset=self.digit_offset,
        )


def build_scene(cfg: RunConfig, photons: float | None = None) -> Scene:
    """Probe, Poisson-disk scan and canvas for ``cfg``.

    The canvas is the smallest square holding every scan window and the digit,
    with the digit centered. ``scan=poisson`` draws ``n_positions`` Poisson-disk
    positions from ``cfg.seed``; ``scan=fermat`` lays out ``fermat_count``
    spiral positions at the requested overlap. ``scan_subset`` (comma-separated
    indices) then keeps only the listed positions.
    """
    grid = Grid(cfg.nx, cfg.ny, cfg.pitch_m, cfg.wavelength_m)
    plan = make_plan(grid, cfg.z_m)
    total = cfg.photons if photons is None else photons
    probe = synthesize_probe(grid, cfg.probe_diameter_px * cfg.pitch_m,
                             cfg.probe_edge_px * cfg.pitch_m, total).values
    diameter = cfg.probe_diameter_px * cfg.pitch_m
    if cfg.scan == "poisson":
        pattern = poisson_disk_count(cfg.n_positions, diameter, cfg.overlap, cfg.scan_attempts,
                                     derive_seed(cfg.seed, "scan") % 2 ** 63)
    elif cfg.scan == "fermat":
        pattern = fermat_for_overlap(cfg.fermat_count, diameter, cfg.overlap)
    else:
        raise ValueError(f"unknown scan kind {cfg.scan!r}; expected poisson or fermat")
    subset = cfg.subset_list
    if subset:
        if min(subset) < 0 or max(subset) >= pattern.count or len(set(subset)) != len(subset):
            raise ValueError(f"scan_subset must list distinct indices below {pattern.count}")
        pattern = pattern.subset(subset)
    reach = int(np.ceil(np.max(np.abs(pattern.positions)) / cfg.pitch_m)) + 1
    side = max(max(cfg.nx, cfg.ny) + 2 * reach, cfg.digit_px)
    canvas = (side, side)
    positions_px = pattern.to_pixels(cfg.pitch_m, canvas, grid.shape)
    off = ((side - cfg.digit_px) // 2, (side - cfg.digit_px) // 2)
    return Scene(grid, plan, probe, pattern, positions_px, canvas, (cfg.digit_px, cfg.digit_px), off)


def load_image(spec: str, data_dir: str = "") -> np.ndarray:
    """Ground-truth image in [0, 1].

    ``spec`` is a PGM or PTYB path, or ``mnist:<split>:<index>`` for a padded
    32x32 MNIST image read from ``data_dir``.
    """
    if spec.startswith("mnist:"):
        from .neural.mnist import load_split

        parts = spec.split(":")
        if len(parts) != 3 or parts[1] not in ("train", "test") or not parts[2].isdigit():
            raise ValueError(f"bad MNIST reference {spec!r}; expected mnist:<train|test>:<index>")
        images, _ = load_split(data_dir, parts[1])
        index = parts[2]
        return images[int(index), :, :, 0]
    p = Path(spec)
    if p.suffix == ".pgm":
        return read_pgm(p) / 255.0
    arr = ptyb.load(p)
    if arr.ndim != 2:
        raise ValueError(f"{p}: ground truth must be a 2-D image")
    return arr.astype(np.float64) / (255.0 if arr.dtype == np.uint8 else 1.0)


def first_index_of(labels, label: int) -> int:
    hits = np.flatnonzero(np.asarray(labels) == label)
    if len(hits) == 0:
        raise ValueError(f"no sample with label {label}")
    return int(hits[0])
