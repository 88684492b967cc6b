"""Scan trajectories: Fermat spiral, Poisson disk, and overlap bookkeeping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GOLDEN_ANGLE_DEG = 137.508


@dataclass(frozen=True)
class ScanPattern:
    """Scan positions ``(x, y)`` in meters, centered on the origin."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if len(pos) < 1:
            raise ValueError("a scan pattern needs at least one position")
        if not np.all(np.isfinite(pos)):
            raise ValueError("scan positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return len(self.positions)

    def subset(self, indices) -> "ScanPattern":
        return ScanPattern(self.positions[list(indices)])

    def to_pixels(self, pitch: float, canvas_shape, window_shape) -> np.ndarray:
        """Top-left ``(row, col)`` offsets of the window for each position.

        Positions are snapped to whole pixels; the canvas center maps to the
        origin. Raises ``IndexError`` if any window leaves the canvas.
        """
        ch, cw = canvas_shape
        wh, ww = window_shape
        cols = np.rint(self.positions[:, 0] / pitch).astype(int) + cw // 2 - ww // 2
        rows = np.rint(self.positions[:, 1] / pitch).astype(int) + ch // 2 - wh // 2
        offsets = np.stack([rows, cols], axis=1)
        bad = (rows < 0) | (cols < 0) | (rows + wh > ch) | (cols + ww > cw)
        if np.any(bad):
            raise IndexError(f"{int(bad.sum())} scan positions fall outside the {ch}x{cw} canvas")
        return offsets

    def nearest_neighbor_distances(self) -> np.ndarray:
        if self.count < 2:
            return np.array([np.inf])
        d = np.linalg.norm(self.positions[:, None, :] - self.positions[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        return d.min(axis=1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "x_m", "y_m"])
            for i, (x, y) in enumerate(self.positions):
                w.writerow([i, repr(float(x)), repr(float(y))])

    @classmethod
    def read_csv(cls, path) -> "ScanPattern":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([[float(r["x_m"]), float(r["y_m"])] for r in rows]))


def fermat_spiral(n: int, c: float) -> ScanPattern:
    """Position ``k`` at radius ``c*sqrt(k)`` and angle ``k`` golden angles."""
    if n < 1 or c <= 0:
        raise ValueError("fermat_spiral needs n >= 1 and c > 0")
    k = np.arange(n)
    r = c * np.sqrt(k)
    theta = np.deg2rad(GOLDEN_ANGLE_DEG) * k
    return ScanPattern(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))


def poisson_disk(width: float, height: float, r_min: float, k_attempts: int = 30,
                 seed: int = 0) -> ScanPattern:
    """Bridson dart throwing over a ``width x height`` rectangle centered on the origin."""
    if r_min <= 0 or width <= 0 or height <= 0:
        raise ValueError("poisson_disk needs positive region and r_min")
    rng = np.random.Generator(np.random.Philox(seed))
    cell = r_min / math.sqrt(2.0)
    gw, gh = int(math.ceil(width / cell)), int(math.ceil(height / cell))
    grid = -np.ones((gh, gw), dtype=int)
    points: list[tuple[float, float]] = []

    def insert(p):
        grid[int(p[1] / cell), int(p[0] / cell)] = len(points)
        points.append(p)

    def fits(p) -> bool:
        gx, gy = int(p[0] / cell), int(p[1] / cell)
        for j in range(max(gy - 2, 0), min(gy + 3, gh)):
            for i in range(max(gx - 2, 0), min(gx + 3, gw)):
                q = grid[j, i]
                if q >= 0 and math.hypot(p[0] - points[q][0], p[1] - points[q][1]) < r_min:
                    return False
        return True

    first = (rng.random() * width, rng.random() * height)
    insert(first)
    active = [0]
    while active:
        slot = int(rng.integers(len(active)))
        qx, qy = points[active[slot]]
        for _ in range(k_attempts):
            ang = 2.0 * math.pi * rng.random()
            rad = r_min * (1.0 + rng.random())
            p = (qx + rad * math.cos(ang), qy + rad * math.sin(ang))
            if 0.0 <= p[0] < width and 0.0 <= p[1] < height and fits(p):
                insert(p)
                active.append(len(points) - 1)
                break
        else:
            active[slot] = active[-1]
            active.pop()
    pts = np.array(points) - np.array([width / 2.0, height / 2.0])
    return ScanPattern(pts)


def overlap_fraction(d: float, diameter: float) -> float:
    """Intersection area of two discs at center distance ``d`` over one disc's area."""
    if d < 0 or diameter <= 0:
        raise ValueError("overlap_fraction needs d >= 0 and diameter > 0")
    if d >= diameter:
        return 0.0
    r = diameter / 2.0
    lens = 2.0 * r * r * math.acos(d / (2.0 * r)) - 0.5 * d * math.sqrt(4.0 * r * r - d * d)
    return lens / (math.pi * r * r)


def distance_for_overlap(overlap: float, diameter: float) -> float:
    """Center distance giving ``overlap``; inverse of :func:`overlap_fraction` by bisection."""
    if not 0.0 < overlap < 1.0:
        raise ValueError("overlap must lie strictly between 0 and 1")
    lo, hi = 0.0, diameter
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if overlap_fraction(mid, diameter) > overlap:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mean_overlap(pattern: ScanPattern, diameter: float) -> float:
    """Mean nearest-neighbour overlap of a pattern for probe ``diameter``."""
    d = pattern.nearest_neighbor_distances()
    return float(np.mean([overlap_fraction(float(v), diameter) if np.isfinite(v) else 0.0 for v in d]))


def fermat_for_overlap(n: int, diameter: float, overlap: float) -> ScanPattern:
    """Fermat spiral whose scale is bisected to hit a mean nearest-neighbour overlap."""
    lo, hi = 1e-6 * diameter, diameter
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mean_overlap(fermat_spiral(n, mid), diameter) > overlap:
            lo = mid
        else:
            hi = mid
    return fermat_spiral(n, 0.5 * (lo + hi))


def poisson_disk_count(n: int, diameter: float, overlap: float, k_attempts: int = 30,
                       seed: int = 0) -> ScanPattern:
    """Poisson-disk pattern of exactly ``n`` positions near a requested overlap.

    ``r_min`` is fixed by the overlap; the square region is bisected until the
    sampler yields at least ``n`` points, and the ``n`` points closest to the
    center are kept.
    """
    r_min = distance_for_overlap(overlap, diameter)
    lo, hi = r_min, r_min * (2.0 * math.sqrt(n) + 2.0)
    best = None
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        pat = poisson_disk(mid, mid, r_min, k_attempts, seed)
        if pat.count >= n:
            best, hi = pat, mid
        else:
            lo = mid
    if best is None:
        best = poisson_disk(hi, hi, r_min, k_attempts, seed)
    order = np.argsort(np.linalg.norm(best.positions, axis=1), kind="stable")[:n]
    pts = best.positions[np.sort(order)]
    return ScanPattern(pts - pts.mean(axis=0))
