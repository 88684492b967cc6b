import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptylatent.neural import (AdamState, Autoencoder, AutoencoderConfig, TrainConfig, adam_step, bce_grad,
                              bce_loss, effective_rank, filter_class, idx_load, latent_mean, load_split,
                              load_weights, matrix_rank, save_weights, train_autoencoder)
from ptylatent.neural import layers as L
from ptylatent.neural.mnist import IdxError, pad_images

MNIST_DIR = Path(os.environ.get("PTYLATENT_MNIST_DIR", "/root/data/mnist"))
SMALL = AutoencoderConfig(channels=(2, 3, 4, 5), latent_dim=6, n_linear=3)


def naive_conv(x, w, b, stride=2):
    """Direct loops: same padding (1, 1) for 4x4 kernels at stride 2."""
    n, h, wd, cin = x.shape
    k, _, _, cout = w.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ho, wo = h // stride, wd // stride
    y = np.zeros((n, ho, wo, cout))
    for a in range(n):
        for i in range(ho):
            for j in range(wo):
                patch = xp[a, i * stride:i * stride + k, j * stride:j * stride + k, :]
                y[a, i, j] = np.tensordot(patch, w, axes=([0, 1, 2], [0, 1, 2])) + b
    return y


def randomized(model, seed=0, scale=0.3):
    """Copy with nonzero random biases so no ReLU sits exactly on its kink."""
    rng = np.random.default_rng(seed)
    p = {k: (v + scale * rng.standard_normal(v.shape) if k.endswith(".b") else v.copy())
         for k, v in model.params.items()}
    return Autoencoder(model.config, p)


def test_same_padding():
    assert L.same_padding(32, 4, 2) == (1, 1)
    assert L.same_padding(2, 4, 2) == (1, 1)


def test_conv_matches_loops():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 8, 8, 3))
    w = rng.standard_normal((4, 4, 3, 5))
    b = rng.standard_normal(5)
    y, _ = L.conv2d_forward(x, w, b)
    np.testing.assert_allclose(y, naive_conv(x, w, b), atol=1e-12)


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2 ** 31))
def test_transpose_conv_is_adjoint(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 8, 8, 3))
    w = rng.standard_normal((4, 4, 3, 5))
    y = rng.standard_normal((2, 4, 4, 5))
    conv, _ = L.conv2d_forward(x, w, None)
    # the transposed layer reads the same (k, k, 3, 5) array as (k, k, cout, cin)
    up, _ = L.conv_transpose_forward(y, w, None)
    assert np.sum(conv * y) == pytest.approx(np.sum(x * up), rel=1e-12, abs=1e-10)


def test_im2col_col2im_adjoint():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 6, 6, 2))
    cols, geom = L.im2col(x, 4, 2)
    c = rng.standard_normal(cols.shape)
    assert np.sum(cols * c) == pytest.approx(np.sum(x * L.col2im(c, geom, 4, 2)), rel=1e-12)


def numeric_grad(f, arr, idx, h=1e-6):
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


@pytest.mark.parametrize("irmae", [True, False])
def test_autoencoder_gradients(irmae):
    cfg = AutoencoderConfig(channels=SMALL.channels, latent_dim=6, n_linear=3, irmae=irmae)
    model = randomized(Autoencoder.initialize(cfg, seed=3))
    x = np.random.default_rng(2).random((2, 32, 32, 1))
    _, grads = model.loss_and_grads(x)
    rng = np.random.default_rng(4)
    worst = 0.0
    for name, arr in model.params.items():
        for _ in range(3):
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            num = numeric_grad(lambda: model.loss_and_grads(x)[0], arr, idx)
            ana = grads[name][idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    assert worst < 1e-5


def test_decoder_latent_gradient():
    model = randomized(Autoencoder.initialize(SMALL, seed=5), seed=1)
    h = np.random.default_rng(0).standard_normal((1, 6))
    target = np.random.default_rng(1).random((1, 32, 32, 1))

    def loss():
        return float(np.sum(model.decode_forward(h)[0] * target))

    _, cache = model.decode_forward(h)
    dh, _ = model.decode_backward(target, cache, need_params=False)
    for i in range(6):
        assert dh[0, i] == pytest.approx(numeric_grad(loss, h, (0, i)), rel=1e-6, abs=1e-9)


def test_shapes_and_zero_weights():
    model = Autoencoder.initialize(seed=0)
    x = np.random.default_rng(0).random((5, 32, 32, 1))
    h, (caches, shape, _, lin) = model.encode_forward(x)
    assert h.shape == (5, 128)
    assert [c[1].shape[1] for c in caches] == [16, 8, 4, 2]
    assert shape == (5, 2, 2, 256) and len(lin) == 8
    y = model.decode(np.zeros((1, 128)))
    assert y.shape == (1, 32, 32, 1)
    assert np.all((y > 0) & (y < 1))
    zero = Autoencoder(model.config, {k: np.zeros_like(v) for k, v in model.params.items()})
    assert not zero.encode(x).any()
    np.testing.assert_array_equal(zero.decode(np.ones((2, 128))), 0.5)
    with pytest.raises(ValueError):
        model.encode(np.zeros((1, 28, 28, 1)))
    with pytest.raises(ValueError):
        model.decode(np.zeros((1, 64)))


def test_initialization_ranges():
    model = Autoencoder.initialize(seed=1)
    w = model.params["enc.conv0.w"]
    assert np.abs(w).max() <= np.sqrt(6 / 16)
    assert not model.params["enc.conv0.b"].any()
    assert set(k for k in model.params if "lin" in k) == {f"enc.lin{i}.w" for i in range(8)}
    std = Autoencoder.initialize(AutoencoderConfig(irmae=False), seed=1)
    assert not any("lin" in k for k in std.params)
    np.testing.assert_array_equal(std.bottleneck_product(), np.eye(128))


def test_bce_examples():
    assert bce_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0])) <= 1e-6
    assert bce_loss(np.array([0.5]), np.array([1.0])) == pytest.approx(np.log(2), abs=1e-12)
    x = np.array([0.2, 0.7, 1.0])
    xh = np.array([0.3, 0.6, 0.9])
    g = bce_grad(xh, x)
    for i in range(3):
        assert g[i] == pytest.approx(numeric_grad(lambda: bce_loss(xh, x), xh, (i,)), rel=1e-6)


def test_adam_examples():
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState()
    adam_step(p, {"w": np.zeros(2)}, st_, 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([3.0])}, AdamState(), 0.01)
    assert p["w"][0] == pytest.approx(-0.01, rel=1e-8)


def test_adam_matches_reference_recursion():
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
    g = np.array([0.3, -1.2, 4.0])
    p = {"w": np.array([1.0, 2.0, 3.0])}
    ref = p["w"].copy()
    m = v = np.zeros(3)
    state = AdamState()
    for t in (1, 2):
        adam_step(p, {"w": g}, state, lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g ** 2
        ref = ref - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(p["w"], ref, atol=1e-12)


def test_adam_complex_parts_independent():
    p = {"o": np.array([0j])}
    adam_step(p, {"o": np.array([2.0 - 1e-3j])}, AdamState(), 0.1)
    assert p["o"][0].real == pytest.approx(-0.1, rel=1e-6)
    assert p["o"][0].imag == pytest.approx(0.1, rel=1e-4)


def test_adam_validation():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(2)}, AdamState(), 0.0)
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1)
    with pytest.raises(KeyError):
        adam_step({"w": np.zeros(2)}, {"q": np.zeros(2)}, AdamState(), 0.1)


def test_effective_rank_examples():
    assert effective_rank(np.eye(128))[0] == 127
    assert effective_rank(np.ones((10, 128)))[0] == 0
    rng = np.random.default_rng(0)
    assert effective_rank(rng.standard_normal((50, 1)) * rng.standard_normal(128))[0] == 1
    z = rng.standard_normal((2000, 4)) * [10.0, 3.0, 1.5, 0.01]
    rank, s = effective_rank(np.hstack([z, np.zeros((2000, 2))]))
    assert rank == 3 and len(s) == 6


def test_matrix_rank():
    w = np.diag([1.0, 0.5, 0.05, 0.0])
    assert matrix_rank(w) == 2  # squared values 1, 0.25, 0.0025 against 0.01


def test_latent_mean_examples():
    model = Autoencoder.initialize(SMALL, seed=2)
    x = np.random.default_rng(0).random((2, 32, 32, 1))
    z = model.encode(x)
    np.testing.assert_allclose(latent_mean(model, x[:1]), z[0], atol=1e-12)
    np.testing.assert_allclose(latent_mean(model, x), z.mean(axis=0), atol=1e-12)
    with pytest.raises(ValueError):
        latent_mean(model, x[:0])


def test_training_deterministic_and_decreasing():
    x = np.random.default_rng(0).random((16, 32, 32, 1)) ** 4
    cfg = TrainConfig(epochs=3, batch=8, lr=3e-3, seed=9)
    a = train_autoencoder(x, cfg, SMALL)
    b = train_autoencoder(x, cfg, SMALL)
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k], b.model.params[k])
    assert a.losses[-1] < a.losses[0]
    zero = train_autoencoder(x, TrainConfig(epochs=0), SMALL)
    assert zero.losses == []


def test_weights_round_trip(tmp_path):
    model = Autoencoder.initialize(SMALL, seed=4)
    save_weights(tmp_path / "w", model)
    back = load_weights(tmp_path / "w")
    assert back.config == model.config
    for k in model.params:
        np.testing.assert_array_equal(back.params[k], model.params[k])
    f = tmp_path / "w" / "dec.fc.b.ptyb"
    f.write_bytes(f.read_bytes()[:-8] + b"\x01" * 8)
    with pytest.raises(ValueError):
        load_weights(tmp_path / "w")


def write_idx(tmp_path, images, labels, gz=False):
    img = struct.pack(">IIII", 0x803, *images.shape) + images.astype(np.uint8).tobytes()
    lab = struct.pack(">II", 0x801, len(labels)) + np.asarray(labels, np.uint8).tobytes()
    if gz:
        img, lab = gzip.compress(img), gzip.compress(lab)
    (tmp_path / "img").write_bytes(img)
    (tmp_path / "lab").write_bytes(lab)
    return tmp_path / "img", tmp_path / "lab"


def test_idx_parsing(tmp_path):
    raw = np.zeros((3, 28, 28), np.uint8)
    raw[0, 0, 0] = 255
    raw[1, 27, 27] = 51
    for gz in (False, True):
        x, y = idx_load(*write_idx(tmp_path, raw, [4, 1, 4], gz))
        assert x.shape == (3, 32, 32, 1)
        assert x[0, 2, 2, 0] == 1.0 and x[1, 29, 29, 0] == pytest.approx(0.2)
        assert x[:, :2].max() == 0 and x[:, 30:].max() == 0
        fx, fy = filter_class(x, y, 4)
        assert list(fy) == [4, 4]
        np.testing.assert_array_equal(fx, x[[0, 2]])
        ffx, ffy = filter_class(fx, fy, 4)
        np.testing.assert_array_equal(ffx, fx)
    with pytest.raises(ValueError):
        filter_class(x, y, 7)


def test_idx_errors(tmp_path):
    raw = np.zeros((2, 28, 28), np.uint8)
    img, lab = write_idx(tmp_path, raw, [1, 2])
    img.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(IdxError):
        idx_load(img, lab)
    img, lab = write_idx(tmp_path, raw, [1, 2, 3])
    with pytest.raises(IdxError):
        idx_load(img, lab)
    img.write_bytes(struct.pack(">IIII", 0x801, 2, 28, 28) + raw.tobytes())
    with pytest.raises(IdxError):
        idx_load(img, lab)


def test_pad_images():
    out = pad_images(np.full((1, 28, 28), 255, np.uint8))
    assert out[0, 2:30, 2:30].min() == 1.0 and out.sum() == 28 * 28


def test_mnist_files():
    assert MNIST_DIR.is_dir(), f"MNIST files not found in {MNIST_DIR} (set PTYLATENT_MNIST_DIR)"
    x, y = load_split(MNIST_DIR, "train", dtype=np.float32)
    assert x.shape == (60000, 32, 32, 1) and len(y) == 60000
    assert x.min() == 0.0 and x.max() == 1.0
    xt, yt = load_split(MNIST_DIR, "test", dtype=np.float32)
    assert len(xt) == 10000 and set(np.unique(yt)) == set(range(10))
    assert len(filter_class(xt, yt, 4)[0]) == 982


def test_bottleneck_init_scales():
    small = Autoencoder.initialize(AutoencoderConfig(channels=(2, 2, 2, 2), latent_dim=64), seed=0)
    he = Autoencoder.initialize(AutoencoderConfig(channels=(2, 2, 2, 2), latent_dim=64, linear_init="he"), seed=0)
    assert np.abs(small.params["enc.lin0.w"]).max() <= 1 / 8
    assert np.abs(he.params["enc.lin0.w"]).max() > 1 / 8
    # the fan-in chain contracts, the He chain expands
    assert np.linalg.norm(small.bottleneck_product(), 2) < 1 < np.linalg.norm(he.bottleneck_product(), 2)
    with pytest.raises(ValueError):
        AutoencoderConfig(linear_init="orthogonal")
