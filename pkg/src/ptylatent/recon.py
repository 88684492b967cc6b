"""Losses, the differentiable ptychographic forward model, and the reconstruction driver.

Complex gradients follow the steepest-descent convention: for a complex
parameter ``z = a + ib`` the reported gradient is ``dL/da + i dL/db``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .field import extract_patch, resize, resize_adjoint
from .neural.autoencoder import Autoencoder
from .neural.optim import AdamState, adam_step
from .optics import PropagationPlan, propagate, propagate_adjoint
from .simulator import DiffractionStack

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
LR_DECAY = 0.97


class LossKind(str, Enum):
    MIXED = "mixed"
    POISSON = "poisson"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown loss kind {value!r}; expected 'mixed' or 'poisson'") from None


class Mode(str, Enum):
    CONVENTIONAL = "conventional"
    LATENT = "latent"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown mode {value!r}; expected 'conventional' or 'latent'") from None


class DivergenceError(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


# losses -------------------------------------------------------------------

def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def mixed_loss(I, X, noise_var) -> float:
    """Sum over pixels of ``ln(I + s) + (X - I)**2 / (I + s)`` with ``I + s`` floored at 1e-12."""
    _check_shapes(I, X)
    v = np.maximum(I + noise_var, VARIANCE_FLOOR)
    e = X - I
    return float(np.sum(np.log(v) + e * e / v))


def mixed_loss_grad(I, X, noise_var) -> np.ndarray:
    """``dL/dI`` of :func:`mixed_loss`; the floor is treated as a constant."""
    raw = I + noise_var
    v = np.maximum(raw, VARIANCE_FLOOR)
    e = X - I
    live = raw > VARIANCE_FLOOR
    return np.where(live, 1.0 / v - 2.0 * e / v - e * e / (v * v), -2.0 * e / v)


def poisson_loss(I, X) -> float:
    """``sum (sqrt(X) - sqrt(I))**2``; negative measurements are clamped to zero."""
    _check_shapes(I, X)
    I = np.asarray(I)
    if np.any(I < 0):
        raise ValueError("predicted intensities must be nonnegative")
    d = np.sqrt(np.maximum(X, 0.0)) - np.sqrt(I)
    return float(np.sum(d * d))


def poisson_loss_grad(I, X) -> np.ndarray:
    """``dL/dI`` of :func:`poisson_loss` (zero where ``I == 0``)."""
    sI = np.sqrt(I)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = 1.0 - np.sqrt(np.maximum(X, 0.0)) / sI
    return np.where(sI > 0, g, 0.0)


def loss_and_field_grad(kind: LossKind, psi: np.ndarray, X: np.ndarray, noise_var):
    """Loss of the detector field ``psi`` and its gradient ``2 dL/dI psi``.

    The Poisson branch is written in amplitudes, so it stays bounded where the
    predicted intensity vanishes and is exactly zero wherever ``X == |psi|**2``.
    """
    I = psi.real ** 2 + psi.imag ** 2
    if kind is LossKind.MIXED:
        return mixed_loss(I, X, noise_var), 2.0 * mixed_loss_grad(I, X, noise_var) * psi
    amp = np.sqrt(I)
    sx = np.sqrt(np.maximum(X, 0.0))
    d = sx - amp
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(amp > 0, sx / amp, 0.0)
    return float(np.sum(d * d)), 2.0 * (psi - ratio * psi)


def lr_schedule(alpha: float, epoch: int) -> float:
    return alpha * LR_DECAY ** epoch


# pipeline -------------------------------------------------------------------

@dataclass
class Pipeline:
    """Everything fixed during a reconstruction.

    ``object_shape`` is the canvas the probe window scans over. In latent mode
    the decoder output is resized to ``digit_size`` (rows, cols) and written
    into a canvas filled with ``background`` at ``digit_offset``.
    """

    probe: np.ndarray
    plan: PropagationPlan
    positions_px: np.ndarray
    noise_var: np.ndarray | float
    object_shape: tuple[int, int]
    decoder: Autoencoder | None = None
    digit_size: tuple[int, int] | None = None
    digit_offset: tuple[int, int] = (0, 0)
    background: float = 0.0

    def __post_init__(self):
        self.probe = np.asarray(self.probe, dtype=np.complex128)
        self.positions_px = np.asarray(self.positions_px, dtype=np.int64).reshape(-1, 2)
        if self.probe.shape != self.plan.grid.shape:
            raise ValueError("probe shape does not match the propagation grid")
        wh, ww = self.window
        for r, c in self.positions_px:
            if r < 0 or c < 0 or r + wh > self.object_shape[0] or c + ww > self.object_shape[1]:
                raise IndexError(f"scan window at {(r, c)} leaves the {self.object_shape} canvas")
        if self.decoder is not None:
            if self.decoder.dtype != np.float64:
                self.decoder = self.decoder.astype(np.float64)
            if self.digit_size is None:
                raise ValueError("latent pipelines need a digit_size")
            dr, dc = self.digit_offset
            if dr < 0 or dc < 0 or dr + self.digit_size[0] > self.object_shape[0] \
                    or dc + self.digit_size[1] > self.object_shape[1]:
                raise IndexError("digit region leaves the object canvas")

    @property
    def window(self) -> tuple[int, int]:
        return self.probe.shape

    @property
    def n_frames(self) -> int:
        return len(self.positions_px)

    @classmethod
    def from_stack(cls, stack: DiffractionStack, probe, plan, object_shape, **kw) -> "Pipeline":
        if plan.grid != stack.grid:
            raise ValueError("stack grid and propagation plan disagree")
        return cls(probe=probe, plan=plan, positions_px=stack.positions_px,
                   noise_var=stack.noise_var, object_shape=tuple(object_shape), **kw)

    # latent object ----------------------------------------------------------

    def decode_image(self, h) -> np.ndarray:
        """Decoder output for a single latent as a 2-D image."""
        return self.decoder.decode_forward(np.asarray(h, dtype=np.float64)[None, :])[0][0, :, :, 0]

    def latent_object(self, h, with_cache: bool = False):
        """Canvas with the resized decoder output embedded at the digit offset."""
        y, cache = self.decoder.decode_forward(np.asarray(h, dtype=np.float64)[None, :])
        img = y[0, :, :, 0]
        small = resize(img, self.digit_size[1], self.digit_size[0])
        canvas = np.full(self.object_shape, float(self.background))
        dr, dc = self.digit_offset
        canvas[dr:dr + self.digit_size[0], dc:dc + self.digit_size[1]] = small
        return (canvas, (cache, img.shape)) if with_cache else canvas

    def latent_object_adjoint(self, g_canvas: np.ndarray, cache) -> np.ndarray:
        dec_cache, img_shape = cache
        dr, dc = self.digit_offset
        g_small = g_canvas[dr:dr + self.digit_size[0], dc:dc + self.digit_size[1]]
        g_img = resize_adjoint(g_small, img_shape[1], img_shape[0])
        dh, _ = self.decoder.decode_backward(g_img[None, :, :, None], dec_cache, need_params=False)
        return dh[0]

    def object_of(self, params: dict) -> np.ndarray:
        if "latent" in params:
            return self.latent_object(params["latent"])
        return params["object"]

    # forward / adjoint -----------------------------------------------------

    def frame_field(self, obj, probe, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Patch and detector field for frame ``j``."""
        patch = extract_patch(obj, self.window, tuple(self.positions_px[j]))
        return patch, propagate(probe * patch, self.plan)

    def predict(self, params: dict, j: int) -> np.ndarray:
        obj = self.object_of(params)
        _, psi = self.frame_field(obj, params.get("probe", self.probe), j)
        return psi.real ** 2 + psi.imag ** 2

    def total_loss(self, params: dict, frames: np.ndarray, kind=LossKind.MIXED) -> float:
        """Loss summed over every frame, frames taken in index order."""
        kind = LossKind.parse(kind)
        obj = self.object_of(params)
        probe = params.get("probe", self.probe)
        total = 0.0
        for j in range(self.n_frames):
            _, psi = self.frame_field(obj, probe, j)
            total += loss_and_field_grad(kind, psi, frames[j], self.noise_var)[0]
        return total

    def loss_and_grads(self, params: dict, frames: np.ndarray, indices, kind=LossKind.MIXED):
        """Loss summed over frames ``indices`` and gradients for every entry of ``params``.

        ``params`` holds ``"object"`` (complex canvas) or ``"latent"``, plus an
        optional trainable ``"probe"``.
        """
        kind = LossKind.parse(kind)
        latent = "latent" in params
        if latent:
            obj, cache = self.latent_object(params["latent"], with_cache=True)
        else:
            obj = params["object"]
        probe = params.get("probe", self.probe)
        g_obj = np.zeros(self.object_shape, dtype=np.float64 if latent else np.complex128)
        g_probe = np.zeros_like(probe) if "probe" in params else None
        wh, ww = self.window
        total = 0.0
        for j in np.atleast_1d(indices):
            patch, psi = self.frame_field(obj, probe, j)
            loss, g_psi = loss_and_field_grad(kind, psi, frames[j], self.noise_var)
            total += loss
            g_exit = propagate_adjoint(g_psi, self.plan)
            r, c = self.positions_px[j]
            g_patch = np.conj(probe) * g_exit
            g_obj[r:r + wh, c:c + ww] += g_patch.real if latent else g_patch
            if g_probe is not None:
                g_probe += np.conj(patch) * g_exit
        grads = {}
        if latent:
            grads["latent"] = self.latent_object_adjoint(g_obj, cache)
        else:
            grads["object"] = g_obj
        if g_probe is not None:
            grads["probe"] = g_probe
        return total, grads


# reconstruction state and driver -------------------------------------------

@dataclass
class ReconConfig:
    mode: Mode | str = Mode.LATENT
    loss_kind: LossKind | str = LossKind.MIXED
    alpha: float = 0.1
    epochs: int = 100
    seed: int = 0
    init: str = "mean"
    batch: int = 1
    probe_trainable: bool = False
    amplitude_clamp: bool = False
    weight_decay: float = 0.0

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.loss_kind = LossKind.parse(self.loss_kind)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("epochs must be >= 0 and batch >= 1")


@dataclass
class ReconstructionState:
    mode: Mode
    params: dict
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    alpha: float = 0.1
    history: list = field(default_factory=list)

    @property
    def latent(self):
        return self.params.get("latent")

    @property
    def object(self):
        return self.params.get("object")

    @property
    def n_free(self) -> int:
        """Number of real free parameters."""
        n = 0
        for v in self.params.values():
            n += v.size * (2 if np.iscomplexobj(v) else 1)
        return n


@dataclass
class ReconResult:
    state: ReconstructionState
    image: np.ndarray
    final_loss: float


def initial_params(pipeline: Pipeline, config: ReconConfig, mean_latent=None) -> dict:
    """Starting parameters for ``config.init``.

    Latent mode: ``mean`` (needs ``mean_latent``), ``zeros``, ``gaussian``.
    Conventional mode: ``ones`` or ``constant:<value>``.
    """
    init = config.init
    if config.mode is Mode.LATENT:
        if pipeline.decoder is None:
            raise ValueError("latent mode needs a decoder in the pipeline")
        dim = pipeline.decoder.config.latent_dim
        if isinstance(init, np.ndarray):
            h = init.astype(np.float64).copy()
        elif init == "mean":
            if mean_latent is None:
                raise ValueError("init=mean needs the mean training latent")
            h = np.array(mean_latent, dtype=np.float64)
        elif init == "zeros":
            h = np.zeros(dim)
        elif init == "gaussian":
            h = np.random.Generator(np.random.Philox(config.seed)).standard_normal(dim)
        else:
            raise ValueError(f"unknown latent init {init!r}")
        params = {"latent": h}
    else:
        if isinstance(init, np.ndarray):
            obj = init.astype(np.complex128).copy()
        elif init in ("ones", "mean"):
            obj = np.ones(pipeline.object_shape, dtype=np.complex128)
        elif isinstance(init, str) and init.startswith("constant:"):
            obj = np.full(pipeline.object_shape, float(init.split(":", 1)[1]), dtype=np.complex128)
        else:
            raise ValueError(f"unknown conventional init {init!r}")
        params = {"object": obj}
    if config.probe_trainable:
        params["probe"] = pipeline.probe.copy()
    return params


def recovered_image(pipeline: Pipeline, params: dict) -> np.ndarray:
    """Amplitude image of the current estimate over the whole canvas."""
    if "latent" in params:
        return pipeline.latent_object(params["latent"])
    return np.abs(params["object"])


def reconstruct(pipeline: Pipeline, stack: DiffractionStack, config: ReconConfig,
                mean_latent=None, params: dict | None = None) -> ReconResult:
    """Stochastic Adam over randomly ordered frames with an exponentially decaying rate.

    Each epoch shuffles the frames from ``config.seed`` and takes one Adam step
    per ``config.batch`` frames at ``alpha * 0.97**epoch``.
    """
    if stack.count != pipeline.n_frames or stack.grid != pipeline.plan.grid:
        raise ValueError("stack does not match the pipeline geometry")
    if params is None:
        params = initial_params(pipeline, config, mean_latent)
    state = ReconstructionState(config.mode, params, alpha=config.alpha)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed, spawn_key=(7,))))
    frames = stack.frames
    step = 0
    for epoch in range(config.epochs):
        lr = lr_schedule(config.alpha, epoch)
        order = rng.permutation(pipeline.n_frames)
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            loss, grads = pipeline.loss_and_grads(state.params, frames, idx, config.loss_kind)
            if config.weight_decay and "object" in grads:
                loss += config.weight_decay * float(np.sum(np.abs(state.params["object"]) ** 2))
                grads["object"] = grads["object"] + 2.0 * config.weight_decay * state.params["object"]
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step}", state)
            state.history.append((step, epoch, int(idx[0]) if len(idx) == 1 else -1, loss))
            adam_step(state.params, grads, state.adam, lr)
            if config.amplitude_clamp and "object" in state.params:
                o = state.params["object"]
                amp = np.abs(o)
                np.multiply(o, np.where(amp > 1.0, 1.0 / np.maximum(amp, 1e-300), 1.0), out=o)
            step += 1
        state.epoch = epoch + 1
        log.debug("epoch %d lr %.4g last loss %.6g", epoch, lr, state.history[-1][3] if state.history else np.nan)
    final = pipeline.total_loss(state.params, frames, config.loss_kind)
    if not np.isfinite(final):
        raise DivergenceError("non-finite final loss", state)
    return ReconResult(state, recovered_image(pipeline, state.params), final)
