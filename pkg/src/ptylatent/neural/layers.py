"""Layer primitives with explicit backward passes (NHWC layout).

Convolutions use 4x4-style kernels of shape ``(kh, kw, cin, cout)`` with
"same" padding; transposed convolutions are the exact adjoint of a
convolution with kernel ``(kh, kw, cout, cin)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    return as_strided(xp, shape=(n, ho, wo, k, k, c),
                      strides=(sn, stride * sh, stride * sw, sh, sw, sc), writeable=False)


def im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, tuple]:
    """Patch matrix of shape ``(n*ho*wo, k*k*c)`` plus geometry for :func:`col2im`."""
    n, h, w, c = x.shape
    (pt, pb), (pl, pr) = same_padding(h, k, stride), same_padding(w, k, stride)
    ho, wo = -(-h // stride), -(-w // stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = _windows(xp, k, stride, ho, wo).reshape(n * ho * wo, k * k * c)
    return cols, (n, h, w, c, ho, wo, pt, pl, xp.shape)


def col2im(cols: np.ndarray, geom: tuple, k: int, stride: int) -> np.ndarray:
    """Scatter-add patch columns back to an image; transpose of :func:`im2col`."""
    n, h, w, c, ho, wo, pt, pl, pshape = geom
    cols = cols.reshape(n, ho, wo, k, k, c)
    xp = np.zeros(pshape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += cols[:, :, :, i, j, :]
    return xp[:, pt:pt + h, pl:pl + w, :]


def conv_geometry(shape, k: int, stride: int) -> tuple:
    n, h, w, c = shape
    (pt, pb), (pl, pr) = same_padding(h, k, stride), same_padding(w, k, stride)
    ho, wo = -(-h // stride), -(-w // stride)
    return (n, h, w, c, ho, wo, pt, pl, (n, h + pt + pb, w + pl + pr, c))


def conv2d_forward(x, w, b, stride=2):
    k, _, cin, cout = w.shape
    cols, geom = im2col(x, k, stride)
    n, _, _, _, ho, wo = geom[:6]
    y = (cols @ w.reshape(k * k * cin, cout)).reshape(n, ho, wo, cout)
    if b is not None:
        y += b
    return y, (cols, geom, w, stride)


def conv2d_backward(dy, cache):
    cols, geom, w, stride = cache
    k, _, cin, cout = w.shape
    dy2 = dy.reshape(-1, cout)
    dw = (cols.T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0)
    dx = col2im(dy2 @ w.reshape(k * k * cin, cout).T, geom, k, stride)
    return dx, dw, db


def conv_transpose_forward(x, w, b, stride=2):
    """Upsampling by ``stride``; ``w`` has shape ``(k, k, cout, cin)``."""
    k, _, cout, cin = w.shape
    n, h, wd, _ = x.shape
    geom = conv_geometry((n, h * stride, wd * stride, cout), k, stride)
    y = col2im(x.reshape(-1, cin) @ w.reshape(k * k * cout, cin).T, geom, k, stride)
    if b is not None:
        y = y + b
    return y, (x, geom, w, stride)


def conv_transpose_backward(dy, cache):
    x, geom, w, stride = cache
    k, _, cout, cin = w.shape
    cols, _ = im2col(dy, k, stride)
    x2 = x.reshape(-1, cin)
    dw = (cols.T @ x2).reshape(w.shape)
    db = dy.sum(axis=(0, 1, 2))
    dx = (cols @ w.reshape(k * k * cout, cin)).reshape(x.shape)
    return dx, dw, db


def dense_forward(x, w, b=None):
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (x > 0)


def sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def he_uniform(rng, shape, fan_in, dtype=np.float64):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def fan_in_uniform(rng, shape, fan_in, dtype=np.float64):
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the common default for dense layers."""
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
