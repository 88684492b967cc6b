"""Autoencoder weight archives: one PTYB file per parameter plus a manifest."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import ptyb
from .autoencoder import Autoencoder, AutoencoderConfig

MANIFEST = "manifest.txt"


def save_weights(directory, model: Autoencoder) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cfg = model.config
    lines = [
        f"# channels={','.join(map(str, cfg.channels))} latent_dim={cfg.latent_dim} "
        f"n_linear={cfg.n_linear} irmae={str(cfg.irmae).lower()} image_size={cfg.image_size}",
        "# name shape dtype sha256",
    ]
    for name, arr in model.params.items():
        fname = d / f"{name}.ptyb"
        ptyb.save(fname, np.asarray(arr, dtype=np.float64))
        shape = "x".join(map(str, arr.shape))
        lines.append(f"{name} {shape} f64 {ptyb.checksum(fname)}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")


def load_weights(directory, verify: bool = True) -> Autoencoder:
    d = Path(directory)
    text = (d / MANIFEST).read_text().splitlines()
    header = dict(kv.split("=", 1) for kv in text[0].lstrip("# ").split())
    cfg = AutoencoderConfig(
        channels=tuple(int(c) for c in header["channels"].split(",")),
        latent_dim=int(header["latent_dim"]),
        n_linear=int(header["n_linear"]),
        irmae=header["irmae"] == "true",
        image_size=int(header["image_size"]),
    )
    params = {}
    for line in text[1:]:
        if not line or line.startswith("#"):
            continue
        name, shape, _, digest = line.split()
        fname = d / f"{name}.ptyb"
        if verify and ptyb.checksum(fname) != digest:
            raise ValueError(f"checksum mismatch for {fname}")
        arr = ptyb.load(fname)
        if "x".join(map(str, arr.shape)) != shape:
            raise ValueError(f"shape mismatch for {fname}")
        params[name] = arr
    return Autoencoder(cfg, params)
