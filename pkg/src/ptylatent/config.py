"""Flat ``key=value`` run configuration.

One entry per line, ``#`` starts a comment. Unknown keys are rejected and
command-line overrides win over file entries.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from . import ptyb


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths
    out: str = ""
    data_dir: str = ""
    ground_truth: str = ""
    stack: str = ""
    weights: str = ""
    state: str = ""
    # optics
    nx: int = 256
    ny: int = 256
    wavelength_m: float = 561e-9
    pitch_m: float = 3.45e-6
    z_m: float = 0.08
    probe_diameter_px: float = 160.0
    probe_edge_px: float = 5.0
    # object and scan
    digit_px: int = 288
    scan: str = "poisson"
    n_positions: int = 16
    overlap: float = 0.67
    scan_attempts: int = 30
    fermat_count: int = 96
    scan_subset: str = ""
    # noise
    photons: float = 1e6
    sigma_readout: float = 0.3
    seed: int = 0
    # reconstruction
    mode: str = "latent"
    loss_kind: str = "mixed"
    alpha: float = 0.1
    epochs: int = 100
    batch: int = 1
    init: str = "mean"
    conv_init: str = "ones"
    amplitude_clamp: bool = True
    restarts: int = 1
    # autoencoder
    latent_dim: int = 128
    n_linear: int = 8
    linear_init: str = "fan_in"
    irmae: bool = True
    class_filter: int = -1
    train_count: int = 10000
    ae_epochs: int = 20
    ae_batch: int = 64
    ae_lr: float = 1e-3
    ae_dtype: str = "float32"
    tau: float = 0.01
    # sweep and landscape
    photon_list: str = "1e3,1e4,1e5,1e6"
    sweep_modes: str = "conventional,latent"
    grid_n: int = 21
    span: float = 10.0
    validation_count: int = 1000

    def with_updates(self, items: dict) -> "RunConfig":
        return dataclasses.replace(self, **_coerce_all(items))

    def resolved(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def write(self, path) -> None:
        ptyb.write_keyvalues(path, self.resolved())

    @property
    def photons_list(self) -> list[float]:
        return [float(p) for p in self.photon_list.split(",") if p.strip()]

    @property
    def subset_list(self) -> list[int]:
        return [int(i) for i in self.scan_subset.split(",") if i.strip()]

    @property
    def modes_list(self) -> list[str]:
        return [m.strip() for m in self.sweep_modes.split(",") if m.strip()]


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if not isinstance(raw, str):
        return raw
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            v = float(raw)
            if v != int(v):
                raise ValueError(raw)
            return int(v)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw.strip()


def _coerce_all(items: dict) -> dict:
    return {k: _coerce(k, v) for k, v in items.items()}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``."""
    items = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            items.update(ptyb.read_keyvalues(p))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    items.update(overrides or {})
    return RunConfig().with_updates(items)


def parse_overrides(pairs) -> dict:
    """``["key=value", ...]`` from the command line."""
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override must be key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v
    return out
