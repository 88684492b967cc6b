"""Command-line entry point: ``ptylatent <command> [-c FILE] [key=value ...] [--force]``.

Commands: ``simulate``, ``train-ae``, ``reconstruct``, ``sweep``, ``landscape``.
Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, plotting, ptyb
from .config import ConfigError, RunConfig, load_config, parse_overrides
from .neural import (AutoencoderConfig, TrainConfig, effective_rank, filter_class, latent_mean,
                     load_split, load_weights, matrix_rank, save_weights, train_autoencoder)
from .neural.mnist import IdxError
from .pgm import write_pgm
from .recon import DivergenceError, LossKind, Mode, ReconConfig, reconstruct
from .scene import Scene, build_scene, load_image
from .simulator import (DiffractionStack, apply_noise, derive_seed, expected_stack, read_stack,
                        write_stack)

log = logging.getLogger("ptylatent")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
MANIFEST = "manifest"


class DataError(RuntimeError):
    pass


# helpers -------------------------------------------------------------------

def _require(cfg: RunConfig, *keys: str) -> None:
    for k in keys:
        if not getattr(cfg, k):
            raise ConfigError(f"missing required key {k!r}")


def _require_path(path: str, what: str, kind: str = "dir") -> Path:
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise DataError(f"{what} not found: {p}")
    return p


def _prepare_out(cfg: RunConfig, force: bool) -> Path:
    _require(cfg, "out")
    out = Path(cfg.out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    return out


def _open_out(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.resolved")


def _write_manifest(out: Path) -> None:
    lines = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            lines.append(f"{hashlib.sha256(p.read_bytes()).hexdigest()}  {p.relative_to(out).as_posix()}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n")


def _check_gt(cfg: RunConfig) -> None:
    if cfg.ground_truth.startswith("mnist:"):
        parts = cfg.ground_truth.split(":")
        if len(parts) != 3 or parts[1] not in ("train", "test") or not parts[2].isdigit():
            raise ConfigError("ground_truth must look like mnist:<train|test>:<index>")
        _require_path(cfg.data_dir, "MNIST directory")
    else:
        _require_path(cfg.ground_truth, "ground-truth image", "file")


def _check_photons(p: float) -> None:
    if not p > 0 or not np.isfinite(p):
        raise ConfigError(f"photons must be positive, got {p}")


def _training_images(cfg: RunConfig, split: str = "train", count: int | None = None):
    dtype = np.float64 if split == "test" else np.dtype(cfg.ae_dtype)
    images, labels = load_split(cfg.data_dir, split, dtype=dtype)
    n = cfg.train_count if count is None else count
    images, labels = images[:n], labels[:n]
    if cfg.class_filter >= 0:
        images, labels = filter_class(images, labels, cfg.class_filter)
    return images, labels


def _simulate(cfg: RunConfig, scene: Scene, gt_canvas, label: str) -> tuple[DiffractionStack, DiffractionStack]:
    clean = expected_stack(gt_canvas.astype(np.complex128), scene.probe, scene.positions_px, scene.plan)
    noisy = apply_noise(clean, cfg.sigma_readout, derive_seed(cfg.seed, label))
    return clean, noisy


def _recon_config(cfg: RunConfig, mode: str, attempt: int = 0) -> ReconConfig:
    mode = Mode.parse(mode)
    init = cfg.init if mode is Mode.LATENT else cfg.conv_init
    label = f"recon:{mode.value}" if attempt == 0 else f"recon:{mode.value}:{attempt}"
    return ReconConfig(mode=mode, loss_kind=cfg.loss_kind, alpha=cfg.alpha, epochs=cfg.epochs,
                       seed=derive_seed(cfg.seed, label) % 2 ** 63, init=init,
                       batch=cfg.batch, amplitude_clamp=cfg.amplitude_clamp)


def _mean_latent(cfg: RunConfig, model):
    if cfg.init != "mean":
        return None
    _require_path(cfg.data_dir, "training set (needed for init=mean)")
    images, _ = _training_images(cfg)
    return latent_mean(model.astype(np.float64), images.astype(np.float64))


def _validate_recon_keys(cfg: RunConfig, modes) -> None:
    LossKind.parse(cfg.loss_kind)
    for m in modes:
        Mode.parse(m)
    if cfg.epochs < 0 or cfg.batch < 1 or not cfg.alpha > 0 or cfg.restarts < 1:
        raise ConfigError("need epochs >= 0, batch >= 1, alpha > 0 and restarts >= 1")


def _load_stack_dir(cfg: RunConfig):
    d = _require_path(cfg.stack, "stack bundle")
    stack = read_stack(d)
    probe = ptyb.load(d / "probe.ptyb")
    scene = build_scene(cfg)
    if stack.grid != scene.grid or stack.z != cfg.z_m:
        raise DataError("stack optics (grid, wavelength, pitch or z) differ from the configuration")
    if not np.array_equal(stack.positions_px, scene.positions_px):
        raise DataError("stack scan positions differ from the configured scan")
    if probe.shape != scene.grid.shape:
        raise DataError("stored probe does not match the detector grid")
    return stack, probe, scene


def _write_history(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "frame", "loss"])
        for step, epoch, frame, loss in history:
            w.writerow([step, epoch, frame, repr(float(loss))])


# commands ------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, force: bool = False) -> int:
    _require(cfg, "ground_truth")
    _check_gt(cfg)
    _check_photons(cfg.photons)
    out = _prepare_out(cfg, force)
    scene = build_scene(cfg)
    gt = scene.object_canvas(load_image(cfg.ground_truth, cfg.data_dir))
    clean, noisy = _simulate(cfg, scene, gt, "noise")
    _open_out(out, cfg)
    write_stack(out, noisy, seed=cfg.seed, sigma_readout=cfg.sigma_readout, photons=cfg.photons)
    ptyb.save(out / "expected.ptyb", clean.frames)
    ptyb.save(out / "probe.ptyb", scene.probe)
    ptyb.save(out / "object.ptyb", gt)
    write_pgm(out / "object.pgm", gt)
    scene.pattern.write_csv(out / "scan.csv")
    _write_manifest(out)
    print(f"illumination photons {float(np.sum(np.abs(scene.probe) ** 2)):.6g}")
    print(f"expected detected photons per frame {float(clean.frames.sum()) / clean.count:.6g}")
    return EXIT_OK


def cmd_train_ae(cfg: RunConfig, force: bool = False) -> int:
    _require(cfg, "data_dir")
    _require_path(cfg.data_dir, "MNIST directory")
    if cfg.ae_epochs < 0 or cfg.ae_batch < 1 or not cfg.ae_lr > 0 or cfg.train_count < 1:
        raise ConfigError("need ae_epochs >= 0, ae_batch >= 1, ae_lr > 0 and train_count >= 1")
    if cfg.ae_dtype not in ("float32", "float64"):
        raise ConfigError("ae_dtype must be float32 or float64")
    if cfg.linear_init not in ("fan_in", "he"):
        raise ConfigError("linear_init must be fan_in or he")
    out = _prepare_out(cfg, force)
    images, _ = _training_images(cfg)
    test, test_labels = load_split(cfg.data_dir, "test", dtype=np.float64)
    if cfg.class_filter >= 0:
        test, _ = filter_class(test, test_labels, cfg.class_filter)
    ae_cfg = AutoencoderConfig(latent_dim=cfg.latent_dim, n_linear=cfg.n_linear, irmae=cfg.irmae,
                               linear_init=cfg.linear_init)
    tcfg = TrainConfig(epochs=cfg.ae_epochs, batch=cfg.ae_batch, lr=cfg.ae_lr, seed=cfg.seed, dtype=cfg.ae_dtype)
    result = train_autoencoder(images, tcfg, ae_cfg,
                               progress=lambda e, loss: print(f"epoch {e + 1} loss {loss:.6f}", flush=True))
    model = result.model.astype(np.float64)
    _open_out(out, cfg)
    save_weights(out / "weights", model)
    z = model.encode(test)
    rank, s = effective_rank(z, cfg.tau)
    with open(out / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(result.losses):
            w.writerow([i + 1, repr(float(loss))])
    with open(out / "spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "singular_value", "normalized"])
        for i, v in enumerate(s):
            w.writerow([i + 1, repr(float(v)), repr(float(v / s[0]) if s[0] > 0 else 0.0)])
    report = {
        "effective_rank": rank,
        "tau": cfg.tau,
        "bottleneck_rank": matrix_rank(model.bottleneck_product(), cfg.tau) if cfg.irmae else cfg.latent_dim,
        "n_train": len(images),
        "n_eval": len(z),
        "final_loss": float(result.losses[-1]) if result.losses else float("nan"),
    }
    ptyb.write_keyvalues(out / "rank.txt", report)
    plotting.plot_spectrum(out / "spectrum.png", {"irmae" if cfg.irmae else "standard": s}, cfg.tau)
    if result.losses:
        plotting.plot_losses(out / "losses.png", result.losses, "BCE")
    _write_manifest(out)
    print(f"effective rank {rank} (tau={cfg.tau}) on {len(z)} images")
    return EXIT_OK


def _reconstruct_one(cfg, scene, stack, probe, mode, model, mean_latent):
    """Best of ``cfg.restarts`` runs by final loss; restart k uses its own derived seed."""
    decoder = model if Mode.parse(mode) is Mode.LATENT else None
    pipe = scene.pipeline(stack.noise_var, decoder, probe)
    best = None
    for attempt in range(cfg.restarts):
        res = reconstruct(pipe, stack, _recon_config(cfg, mode, attempt), mean_latent=mean_latent)
        if best is None or res.final_loss < best.final_loss:
            best = res
    return pipe, best


def cmd_reconstruct(cfg: RunConfig, force: bool = False) -> int:
    _require(cfg, "stack")
    _validate_recon_keys(cfg, [cfg.mode])
    latent = Mode.parse(cfg.mode) is Mode.LATENT
    if latent:
        _require(cfg, "weights")
        _require_path(cfg.weights, "weights archive")
        if cfg.init == "mean":
            _require(cfg, "data_dir")
            _require_path(cfg.data_dir, "training set (needed for init=mean)")
    if cfg.ground_truth:
        _check_gt(cfg)
    out = _prepare_out(cfg, force)
    stack, probe, scene = _load_stack_dir(cfg)
    model = load_weights(cfg.weights) if latent else None
    mean = _mean_latent(cfg, model) if latent else None
    pipe, res = _reconstruct_one(cfg, scene, stack, probe, cfg.mode, model, mean)
    _open_out(out, cfg)
    obj = res.state.params["latent"] if latent else res.state.params["object"]
    ptyb.save(out / "object.ptyb", res.image if latent else obj)
    write_pgm(out / "object.pgm", res.image)
    if latent:
        ptyb.save(out / "latent.ptyb", obj)
    _write_history(out / "history.csv", res.state.history)
    summary = {"mode": Mode.parse(cfg.mode).value, "loss_kind": LossKind.parse(cfg.loss_kind).value,
               "final_loss": res.final_loss, "steps": len(res.state.history)}
    if cfg.ground_truth:
        gt = scene.object_canvas(load_image(cfg.ground_truth, cfg.data_dir))
        summary["psnr_db"] = analysis.psnr(scene.digit_region(res.image), scene.digit_region(gt))
    ptyb.write_keyvalues(out / "result.txt", summary)
    _write_manifest(out)
    print(f"final loss {res.final_loss!r}")
    if "psnr_db" in summary:
        print(f"PSNR {summary['psnr_db']:.3f} dB")
    return EXIT_OK


def run_sweep(cfg: RunConfig, model, mean_latent, gt_image, progress=None) -> list[dict]:
    """Simulate and reconstruct at every photon total in ``cfg.photon_list`` for each mode."""
    rows = []
    for photons in cfg.photons_list:
        scene = build_scene(cfg, photons)
        gt = scene.object_canvas(gt_image)
        _, stack = _simulate(cfg, scene, gt, f"noise:{photons!r}")
        for mode in cfg.modes_list:
            t0 = time.perf_counter()
            _, res = _reconstruct_one(cfg, scene, stack, scene.probe, mode, model, mean_latent)
            row = {
                "photons": photons,
                "mode": Mode.parse(mode).value,
                "psnr": analysis.psnr(scene.digit_region(res.image), scene.digit_region(gt)),
                "final_loss": res.final_loss,
                "seconds": time.perf_counter() - t0,
                "image": scene.digit_region(res.image),
            }
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def cmd_sweep(cfg: RunConfig, force: bool = False, record_timing: bool = False) -> int:
    _require(cfg, "ground_truth")
    _check_gt(cfg)
    modes = cfg.modes_list
    if not modes or not cfg.photons_list:
        raise ConfigError("sweep needs at least one mode and one photon total")
    for p in cfg.photons_list:
        _check_photons(p)
    _validate_recon_keys(cfg, modes)
    model = None
    if any(Mode.parse(m) is Mode.LATENT for m in modes):
        _require(cfg, "weights")
        _require_path(cfg.weights, "weights archive")
        if cfg.init == "mean":
            _require(cfg, "data_dir")
            _require_path(cfg.data_dir, "training set (needed for init=mean)")
    out = _prepare_out(cfg, force)
    if any(Mode.parse(m) is Mode.LATENT for m in modes):
        model = load_weights(cfg.weights)
    mean = _mean_latent(cfg, model) if model is not None else None
    gt_image = load_image(cfg.ground_truth, cfg.data_dir)
    rows = run_sweep(cfg, model, mean, gt_image,
                     progress=lambda r: print(f"{r['photons']:.3g} {r['mode']:<12} PSNR {r['psnr']:.2f} dB",
                                              flush=True))
    _open_out(out, cfg)
    (out / "objects").mkdir(exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["photons", "mode", "psnr", "final_loss", "seconds"])
        for r in rows:
            secs = repr(float(r["seconds"])) if record_timing else "nan"
            w.writerow([repr(float(r["photons"])), r["mode"], repr(float(r["psnr"])),
                        repr(float(r["final_loss"])), secs])
            write_pgm(out / "objects" / f"{r['mode']}_{r['photons']:.0e}.pgm", r["image"])
    plotting.plot_sweep(out / "sweep.png", [(r["photons"], r["mode"], r["psnr"]) for r in rows])
    _write_manifest(out)
    return EXIT_OK


def cmd_landscape(cfg: RunConfig, force: bool = False) -> int:
    _require(cfg, "stack", "weights", "state", "data_dir")
    LossKind.parse(cfg.loss_kind)
    if cfg.grid_n < 1 or cfg.grid_n % 2 == 0 or not cfg.span > 0:
        raise ConfigError("grid_n must be a positive odd number and span positive")
    _require_path(cfg.weights, "weights archive")
    state_dir = _require_path(cfg.state, "reconstruction state")
    _require_path(str(state_dir / "latent.ptyb"), "latent reconstruction state", "file")
    _require_path(cfg.data_dir, "MNIST directory")
    out = _prepare_out(cfg, force)
    stack, probe, scene = _load_stack_dir(cfg)
    model = load_weights(cfg.weights)
    h_opt = ptyb.load(state_dir / "latent.ptyb")
    val, val_labels = load_split(cfg.data_dir, "test", dtype=np.float64)
    val, val_labels = val[:cfg.validation_count], val_labels[:cfg.validation_count]
    if cfg.class_filter >= 0:
        val, _ = filter_class(val, val_labels, cfg.class_filter)
    pcs = analysis.pca_leading(model.encode(val))
    pipe = scene.pipeline(stack.noise_var, model, probe)
    grid = analysis.landscape(pipe, stack.frames, h_opt, pcs.v1, pcs.v2, cfg.grid_n,
                              (-cfg.span, cfg.span), cfg.loss_kind)
    grid.captured_variance = pcs.captured_variance
    _open_out(out, cfg)
    grid.write_csv(out / "landscape.csv")
    ptyb.save(out / "landscape.ptyb", grid.losses)
    ci, cj = grid.center
    note = {
        "loss_kind": grid.loss_kind,
        "captured_variance": pcs.captured_variance,
        "sigma1": float(pcs.singular_values[0]),
        "sigma2": float(pcs.singular_values[1]),
        "ambiguous_directions": pcs.ambiguous,
        "center_loss": float(grid.losses[ci, cj]),
        "argmin_alpha": float(grid.alphas[grid.argmin()[0]]),
        "argmin_beta": float(grid.betas[grid.argmin()[1]]),
        "plateau_fraction": grid.plateau_fraction(),
    }
    ptyb.write_keyvalues(out / "landscape.txt", note)
    plotting.plot_landscape(out / "landscape.png", grid)
    _write_manifest(out)
    print(f"captured variance {pcs.captured_variance:.4f}; center loss {note['center_loss']!r}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train-ae": cmd_train_ae,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "landscape": cmd_landscape,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptylatent", description="Latent-space ptychography toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="key=value configuration file")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        if name == "sweep":
            p.add_argument("--record-timing", action="store_true",
                           help="write wall-clock seconds (makes sweep.csv run-dependent)")
        p.add_argument("overrides", nargs="*", metavar="key=value", help="configuration overrides")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, parse_overrides(args.overrides))
        kw = {"record_timing": args.record_timing} if args.command == "sweep" else {}
        return COMMANDS[args.command](cfg, force=args.force, **kw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, IdxError, ptyb.PtybError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        # invalid enum values and parameter ranges surface as ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
