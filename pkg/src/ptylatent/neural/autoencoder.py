"""Convolutional autoencoder with an optional implicit rank-minimizing bottleneck.

Encoder: four stride-2 4x4 convolutions with ReLU (32 -> 16 -> 8 -> 4 -> 2),
flatten, dense to the latent size, then (IRMAE only) a chain of bias-free
square linear maps. Decoder: dense, reshape to 2x2, four stride-2 transposed
convolutions with ReLU in between and a final sigmoid.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .optim import AdamState, adam_step, bce_loss

log = logging.getLogger(__name__)

KERNEL = 4
STRIDE = 2


@dataclass(frozen=True)
class AutoencoderConfig:
    channels: tuple[int, ...] = (32, 64, 128, 256)
    latent_dim: int = 128
    n_linear: int = 8
    irmae: bool = True
    image_size: int = 32
    # init of the bottleneck maps: "fan_in" (U(+-1/sqrt(n))) or "he"; the small
    # fan-in scale is what lets the linear chain drive the latent rank down
    linear_init: str = "fan_in"

    def __post_init__(self):
        if self.linear_init not in ("he", "fan_in"):
            raise ValueError(f"unknown linear_init {self.linear_init!r}")

    @property
    def bottleneck(self) -> int:
        return self.image_size // STRIDE ** len(self.channels)

    @property
    def flat(self) -> int:
        return self.bottleneck ** 2 * self.channels[-1]


@dataclass
class TrainConfig:
    epochs: int = 50
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0
    dtype: str = "float64"


@dataclass
class TrainResult:
    model: "Autoencoder"
    losses: list = field(default_factory=list)
    seconds: float = 0.0


class Autoencoder:
    """Parameters live in ``self.params`` (an ordered dict of named arrays)."""

    def __init__(self, config: AutoencoderConfig | None = None, params: dict | None = None):
        self.config = config or AutoencoderConfig()
        self.params = params if params is not None else {}

    # construction -------------------------------------------------------

    @classmethod
    def initialize(cls, config: AutoencoderConfig | None = None, seed: int = 0,
                   dtype=np.float64) -> "Autoencoder":
        cfg = config or AutoencoderConfig()
        rng = np.random.Generator(np.random.Philox(seed))
        p: dict[str, np.ndarray] = {}
        cin = 1
        for i, cout in enumerate(cfg.channels):
            p[f"enc.conv{i}.w"] = L.he_uniform(rng, (KERNEL, KERNEL, cin, cout), KERNEL * KERNEL * cin, dtype)
            p[f"enc.conv{i}.b"] = np.zeros(cout, dtype)
            cin = cout
        p["enc.fc.w"] = L.he_uniform(rng, (cfg.flat, cfg.latent_dim), cfg.flat, dtype)
        p["enc.fc.b"] = np.zeros(cfg.latent_dim, dtype)
        if cfg.irmae:
            for i in range(cfg.n_linear):
                init = L.he_uniform if cfg.linear_init == "he" else L.fan_in_uniform
                p[f"enc.lin{i}.w"] = init(rng, (cfg.latent_dim, cfg.latent_dim), cfg.latent_dim, dtype)
        p["dec.fc.w"] = L.he_uniform(rng, (cfg.latent_dim, cfg.flat), cfg.latent_dim, dtype)
        p["dec.fc.b"] = np.zeros(cfg.flat, dtype)
        chans = list(cfg.channels[::-1]) + [1]
        for i in range(len(cfg.channels)):
            cin, cout = chans[i], chans[i + 1]
            # each output pixel sees k*k/stride^2 taps per input channel
            fan_in = KERNEL * KERNEL * cin // STRIDE ** 2
            shape = (KERNEL, KERNEL, cout, cin)
            if i == len(cfg.channels) - 1:
                p[f"dec.deconv{i}.w"] = L.glorot_uniform(rng, shape, fan_in, KERNEL * KERNEL * cout // STRIDE ** 2, dtype)
            else:
                p[f"dec.deconv{i}.w"] = L.he_uniform(rng, shape, fan_in, dtype)
            p[f"dec.deconv{i}.b"] = np.zeros(cout, dtype)
        return cls(cfg, p)

    @property
    def dtype(self):
        return self.params["enc.fc.w"].dtype

    def astype(self, dtype) -> "Autoencoder":
        return Autoencoder(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def encoder_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("enc.")]

    def decoder_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("dec.")]

    def bottleneck_product(self) -> np.ndarray:
        """Product of the linear bottleneck maps (identity for a standard autoencoder)."""
        cfg = self.config
        w = np.eye(cfg.latent_dim)
        if cfg.irmae:
            for i in range(cfg.n_linear):
                w = w @ self.params[f"enc.lin{i}.w"]
        return w

    # encoder ------------------------------------------------------------

    def _check_images(self, x):
        s = self.config.image_size
        if x.ndim != 4 or x.shape[1:] != (s, s, 1):
            raise ValueError(f"expected images of shape (n, {s}, {s}, 1), got {x.shape}")

    def encode_forward(self, x):
        self._check_images(x)
        p, cfg = self.params, self.config
        caches = []
        a = x.astype(self.dtype, copy=False)
        for i in range(len(cfg.channels)):
            z, c = L.conv2d_forward(a, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], STRIDE)
            a = L.relu(z)
            caches.append((c, z))
        shape = a.shape
        h, cfc = L.dense_forward(a.reshape(len(a), -1), p["enc.fc.w"], p["enc.fc.b"])
        lin = []
        if cfg.irmae:
            for i in range(cfg.n_linear):
                h, c = L.dense_forward(h, p[f"enc.lin{i}.w"])
                lin.append(c)
        return h, (caches, shape, cfc, lin)

    def encode_backward(self, dh, cache) -> dict:
        caches, shape, cfc, lin = cache
        p, cfg = self.params, self.config
        grads = {}
        for i in reversed(range(len(lin))):
            dh, grads[f"enc.lin{i}.w"], _ = L.dense_backward(dh, lin[i])
        da, grads["enc.fc.w"], grads["enc.fc.b"] = L.dense_backward(dh, cfc)
        da = da.reshape(shape)
        for i in reversed(range(len(cfg.channels))):
            c, z = caches[i]
            dz = L.relu_backward(da, z)
            da, grads[f"enc.conv{i}.w"], grads[f"enc.conv{i}.b"] = L.conv2d_backward(dz, c)
        return grads

    def encode(self, x, batch: int = 500) -> np.ndarray:
        """Latent vectors for images ``x`` of shape ``(n, 32, 32, 1)``."""
        x = np.asarray(x)
        self._check_images(x)
        out = [self.encode_forward(x[i:i + batch])[0] for i in range(0, len(x), batch)]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.latent_dim))

    # decoder ------------------------------------------------------------

    def decode_forward(self, h):
        cfg, p = self.config, self.params
        h = np.asarray(h, dtype=self.dtype)
        if h.ndim != 2 or h.shape[1] != cfg.latent_dim:
            raise ValueError(f"expected latents of shape (n, {cfg.latent_dim}), got {h.shape}")
        a, cfc = L.dense_forward(h, p["dec.fc.w"], p["dec.fc.b"])
        b = cfg.bottleneck
        a = a.reshape(len(h), b, b, cfg.channels[-1])
        caches = []
        n = len(cfg.channels)
        for i in range(n):
            z, c = L.conv_transpose_forward(a, p[f"dec.deconv{i}.w"], p[f"dec.deconv{i}.b"], STRIDE)
            a = L.sigmoid(z) if i == n - 1 else L.relu(z)
            caches.append((c, z))
        return a, (cfc, caches, a)

    def decode_backward(self, dy, cache, need_params: bool = True, wrt_logits: bool = False):
        """Backpropagate ``dL/dy`` through the decoder; returns ``(dL/dh, param_grads)``.

        With ``wrt_logits`` the incoming gradient is taken with respect to the
        pre-sigmoid activations.
        """
        cfc, caches, y = cache
        cfg = self.config
        grads = {}
        n = len(cfg.channels)
        da = dy if wrt_logits else L.sigmoid_backward(dy, y)
        for i in reversed(range(n)):
            c, z = caches[i]
            if i != n - 1:
                da = L.relu_backward(da, z)
            da, dw, db = L.conv_transpose_backward(da, c)
            if need_params:
                grads[f"dec.deconv{i}.w"], grads[f"dec.deconv{i}.b"] = dw, db
        dh, dw, db = L.dense_backward(da.reshape(len(da), -1), cfc)
        if need_params:
            grads["dec.fc.w"], grads["dec.fc.b"] = dw, db
        return dh, grads

    def decode(self, h, batch: int = 500) -> np.ndarray:
        h = np.atleast_2d(np.asarray(h))
        out = [self.decode_forward(h[i:i + batch])[0] for i in range(0, len(h), batch)]
        return np.concatenate(out, axis=0)

    # training -----------------------------------------------------------

    def loss_and_grads(self, x):
        """Mean BCE of the reconstruction and gradients for every parameter."""
        h, ecache = self.encode_forward(x)
        y, dcache = self.decode_forward(h)
        loss = bce_loss(y, x)
        # sigmoid and BCE fused: dL/dlogit = (y - x) / N
        dh, grads = self.decode_backward((y - x) / y.size, dcache, wrt_logits=True)
        grads.update(self.encode_backward(dh, ecache))
        return loss, grads


def train_autoencoder(images, config: TrainConfig, ae_config: AutoencoderConfig | None = None,
                      model: Autoencoder | None = None, progress=None) -> TrainResult:
    """Minibatch Adam on the reconstruction BCE; reshuffles every epoch from ``config.seed``.

    Returns the trained model and the mean training loss of each epoch.
    """
    dtype = np.dtype(config.dtype)
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("no training images")
    if model is None:
        model = Autoencoder.initialize(ae_config, seed=config.seed, dtype=dtype)
    else:
        model = model.astype(dtype)
    state = AdamState()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed, spawn_key=(1,))))
    losses = []
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(images))
        total, count = 0.0, 0
        for start in range(0, len(images), config.batch):
            idx = order[start:start + config.batch]
            xb = images[idx].astype(dtype, copy=False)
            loss, grads = model.loss_and_grads(xb)
            adam_step(model.params, grads, state, config.lr)
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / count)
        log.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, losses[-1])
        if progress is not None:
            progress(epoch, losses[-1])
    return TrainResult(model, losses, time.perf_counter() - t0)


def latent_mean(model: Autoencoder, images, batch: int = 500) -> np.ndarray:
    """Average latent vector over ``images``, accumulated batch by batch."""
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("latent_mean needs at least one image")
    total = np.zeros(model.config.latent_dim)
    for i in range(0, len(images), batch):
        total += model.encode_forward(images[i:i + batch])[0].astype(np.float64).sum(axis=0)
    return total / len(images)


def effective_rank(latents, tau: float = 0.01) -> tuple[int, np.ndarray]:
    """Count of covariance singular values above ``tau`` times the largest.

    Returns ``(rank, singular_values)`` with singular values in descending order.
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or len(z) < 2:
        raise ValueError("effective_rank needs at least two latent vectors")
    s = np.linalg.svd(np.cov(z, rowvar=False), compute_uv=False)
    if s[0] <= 0:
        return 0, s
    return int(np.sum(s > tau * s[0])), s


def matrix_rank(w, tau: float = 0.01) -> int:
    """Rank of ``w.T @ w`` at the relative threshold used by :func:`effective_rank`.

    Squared singular values are compared because latent covariances transform
    quadratically under the linear map.
    """
    s = np.linalg.svd(np.asarray(w, dtype=np.float64), compute_uv=False) ** 2
    return int(np.sum(s > tau * s[0])) if s[0] > 0 else 0
