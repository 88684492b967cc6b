"""Image quality, latent-space statistics, and loss landscapes."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .recon import LossKind, Pipeline

log = logging.getLogger(__name__)

PSNR_CAP_DB = 120.0


def psnr(xhat, x_gt) -> float:
    """``-10 log10(MSE)`` for unit peak value, capped at 120 dB."""
    xhat = np.asarray(xhat, dtype=np.float64)
    x_gt = np.asarray(x_gt, dtype=np.float64)
    if xhat.shape != x_gt.shape:
        raise ValueError(f"shape mismatch {xhat.shape} vs {x_gt.shape}")
    mse = float(np.mean((xhat - x_gt) ** 2))
    if mse < 1e-12:
        return PSNR_CAP_DB
    return min(-10.0 * np.log10(mse), PSNR_CAP_DB)


@dataclass(frozen=True)
class PrincipalDirections:
    v1: np.ndarray
    v2: np.ndarray
    singular_values: np.ndarray
    ambiguous: bool

    @property
    def captured_variance(self) -> float:
        """Fraction of total latent variance in the (v1, v2) plane."""
        s = self.singular_values
        return float((s[0] + s[1]) / s.sum()) if s.sum() > 0 else 0.0


def _fix_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def pca_leading(latents, rel_gap: float = 0.05) -> PrincipalDirections:
    """Two leading principal directions of the latent covariance.

    Each direction is signed so its largest-magnitude component is positive.
    ``ambiguous`` is set when the two leading singular values lie within
    ``rel_gap`` of each other.
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or len(z) < 3:
        raise ValueError("pca_leading needs at least three latent vectors")
    _, s, vt = np.linalg.svd(np.cov(z, rowvar=False))
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise ValueError("latent covariance is degenerate: second singular value is zero")
    ambiguous = bool(s[0] - s[1] <= rel_gap * s[0])
    if ambiguous:
        warnings.warn("leading singular values are nearly equal; principal directions are ambiguous",
                      stacklevel=2)
    return PrincipalDirections(_fix_sign(vt[0].copy()), _fix_sign(vt[1].copy()), s, ambiguous)


@dataclass
class LandscapeGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    h_opt: np.ndarray
    loss_kind: str = "mixed"
    captured_variance: float = float("nan")

    @property
    def center(self) -> tuple[int, int]:
        return len(self.alphas) // 2, len(self.betas) // 2

    def argmin(self) -> tuple[int, int]:
        return tuple(int(i) for i in np.unravel_index(np.argmin(self.losses), self.losses.shape))

    def plateau_fraction(self, tol: float = 0.01) -> float:
        """Fraction of cells within ``tol`` of the max-min range below the maximum."""
        lo, hi = float(self.losses.min()), float(self.losses.max())
        if hi == lo:
            return 1.0
        return float(np.mean(self.losses >= hi - tol * (hi - lo)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "beta", "loss"])
            for i, a in enumerate(self.alphas):
                for j, b in enumerate(self.betas):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(self.losses[i, j]))])


def landscape(pipeline: Pipeline, frames, h_opt, v1, v2, grid_n: int = 21,
              span: tuple[float, float] = (-10.0, 10.0), loss_kind=LossKind.MIXED) -> LandscapeGrid:
    """Total loss at ``h_opt + alpha*v1 + beta*v2`` over a ``grid_n x grid_n`` grid."""
    if grid_n < 1 or grid_n % 2 == 0:
        raise ValueError("grid_n must be a positive odd number")
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if abs(v1 @ v2) > 1e-10 or abs(np.linalg.norm(v1) - 1) > 1e-12 or abs(np.linalg.norm(v2) - 1) > 1e-12:
        raise ValueError("v1 and v2 must be orthonormal")
    h_opt = np.asarray(h_opt, dtype=np.float64)
    alphas = np.linspace(span[0], span[1], grid_n)
    betas = np.linspace(span[0], span[1], grid_n)
    # make the middle sample exactly zero so the center is h_opt itself
    alphas[grid_n // 2] = 0.0
    betas[grid_n // 2] = 0.0
    losses = np.empty((grid_n, grid_n))
    kind = LossKind.parse(loss_kind)
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            h = h_opt + a * v1 + b * v2
            losses[i, j] = pipeline.total_loss({"latent": h}, frames, kind)
    return LandscapeGrid(alphas, betas, losses, v1, v2, h_opt, kind.value)


def interpolate_latents(model, h_a, h_b, steps: int) -> list[np.ndarray]:
    """Decoded images along the straight line from ``h_a`` to ``h_b`` (endpoints included)."""
    if steps < 2:
        raise ValueError("need at least two interpolation steps")
    h_a = np.asarray(h_a, dtype=np.float64)
    h_b = np.asarray(h_b, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, steps)
    hs = [h_a if t == 0.0 else h_b if t == 1.0 else (1.0 - t) * h_a + t * h_b for t in ts]
    # one decode per step: batched BLAS calls may round differently from a single-row decode
    return [model.decode(h)[0, :, :, 0] for h in hs]


def gaussian_latents(latents_ref, count: int, seed: int) -> np.ndarray:
    """Draws from N(mean, cov) of the reference latents via an eigendecomposition."""
    z = np.asarray(latents_ref, dtype=np.float64)
    if z.ndim != 2 or len(z) < 2:
        raise ValueError("need at least two reference latents")
    mean = z.mean(axis=0)
    evals, evecs = np.linalg.eigh(np.cov(z, rowvar=False))
    if evals.min() < -1e-10 * max(abs(evals.max()), 1e-300):
        warnings.warn("latent covariance is not positive semidefinite; clipping eigenvalues", stacklevel=2)
    scale = evecs * np.sqrt(np.clip(evals, 0.0, None))
    rng = np.random.Generator(np.random.Philox(seed))
    return mean + rng.standard_normal((count, len(mean))) @ scale.T


def sample_latents(model, latents_ref, count: int, seed: int) -> list[np.ndarray]:
    """Decode ``count`` Gaussian draws matching the reference latent statistics."""
    return [img[:, :, 0] for img in model.decode(gaussian_latents(latents_ref, count, seed))]


def tile_images(images, cols: int | None = None, pad: int = 1) -> np.ndarray:
    """Arrange equally sized 2-D images into one sheet (row-major)."""
    images = [np.asarray(im) for im in images]
    if not images:
        raise ValueError("no images to tile")
    h, w = images[0].shape
    cols = cols or len(images)
    rows = -(-len(images) // cols)
    sheet = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad))
    for k, im in enumerate(images):
        r, c = divmod(k, cols)
        sheet[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = im
    return sheet
