"""Report figures rendered to PNG next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no Software/date chunks, so reruns are byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_spectrum(path, spectra: dict, tau: float = 0.01) -> None:
    """Normalized singular spectra on a log axis, one curve per label."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, s in spectra.items():
        s = np.asarray(s, dtype=np.float64)
        ax.semilogy(np.arange(1, len(s) + 1), s / s[0], label=label)
    ax.axhline(tau, color="k", lw=0.8, ls="--")
    ax.set_xlabel("singular value index")
    ax.set_ylabel("normalized singular value")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_losses(path, losses, ylabel: str = "loss") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(len(losses)), losses)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(path, rows) -> None:
    """PSNR against total photons, one line per mode; ``rows`` are (photons, mode, psnr)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in sorted({r[1] for r in rows}):
        pts = sorted((r[0], r[2]) for r in rows if r[1] == mode)
        ax.semilogx([p[0] for p in pts], [p[1] for p in pts], marker="o", label=mode)
    ax.set_xlabel("total photons")
    ax.set_ylabel("PSNR (dB)")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_landscape(path, grid) -> None:
    """Heat map of a ``LandscapeGrid`` with the optimum marked."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    a, b = grid.alphas, grid.betas
    im = ax.imshow(grid.losses.T, origin="lower", extent=(a[0], a[-1], b[0], b[-1]), aspect="auto")
    ax.plot([0.0], [0.0], "r+")
    ax.set_xlabel("alpha (v1)")
    ax.set_ylabel("beta (v2)")
    ax.set_title(f"{grid.loss_kind} loss")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _save(fig, path)
