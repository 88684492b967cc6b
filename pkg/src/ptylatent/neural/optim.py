"""Adam with bias correction and the binary cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BCE_EPS = 1e-7


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One in-place Adam update of every entry in ``grads``; returns ``(params, state)``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])} for {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        if np.iscomplexobj(p):
            # real and imaginary parts are independent real parameters
            v += (1.0 - state.beta2) * (g.real * g.real + 1j * (g.imag * g.imag))
            p.real -= lr * (m.real / bc1) / (np.sqrt(v.real / bc2) + state.eps)
            p.imag -= lr * (m.imag / bc1) / (np.sqrt(v.imag / bc2) + state.eps)
        else:
            v += (1.0 - state.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def bce_loss(xhat, x) -> float:
    """Mean binary cross-entropy with ``xhat`` clamped to ``[eps, 1 - eps]``."""
    xhat = np.asarray(xhat)
    x = np.asarray(x)
    if xhat.shape != x.shape:
        raise ValueError(f"shape mismatch {xhat.shape} vs {x.shape}")
    p = np.clip(xhat, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(x * np.log(p) + (1.0 - x) * np.log(1.0 - p))))


def bce_grad(xhat, x) -> np.ndarray:
    """Gradient of :func:`bce_loss` with respect to ``xhat`` (zero where clamped)."""
    xhat = np.asarray(xhat)
    x = np.asarray(x)
    p = np.clip(xhat, BCE_EPS, 1.0 - BCE_EPS)
    g = (p - x) / (p * (1.0 - p)) / x.size
    return np.where((xhat > BCE_EPS) & (xhat < 1.0 - BCE_EPS), g, 0.0)
