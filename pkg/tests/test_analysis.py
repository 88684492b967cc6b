import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptylatent.analysis import (gaussian_latents, interpolate_latents, landscape, pca_leading, psnr,
                                sample_latents, tile_images)
from ptylatent.field import Grid
from ptylatent.neural import Autoencoder, AutoencoderConfig
from ptylatent.optics import make_plan, synthesize_probe
from ptylatent.pgm import read_pgm, to_u8, write_pgm
from ptylatent.recon import Pipeline

SMALL = AutoencoderConfig(channels=(2, 3, 4, 5), latent_dim=6, n_linear=2)


@pytest.fixture(scope="module")
def model():
    return Autoencoder.initialize(SMALL, seed=2)


def test_psnr_examples():
    a = np.zeros((8, 8))
    assert psnr(a + 0.5, a) == pytest.approx(10 * np.log10(4), abs=1e-12)
    assert psnr(a + 0.1, a) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, a) == 120.0
    assert psnr(a + 1e-9, a) == 120.0
    with pytest.raises(ValueError):
        psnr(a, np.zeros((4, 4)))


@given(st.floats(1e-5, 1.0), st.floats(1e-5, 1.0))
def test_psnr_monotone(e1, e2):
    a = np.zeros(4)
    lo, hi = sorted((e1, e2))
    assert psnr(a + lo, a) >= psnr(a + hi, a)


def test_pca_known_axes():
    rng = np.random.default_rng(0)
    z = np.zeros((4000, 12))
    z[:, 5] = 2.0 * rng.standard_normal(4000)
    z[:, 9] = 1.0 * rng.standard_normal(4000)
    z += 1e-3 * rng.standard_normal(z.shape)
    pd = pca_leading(z)
    assert abs(pd.v1[5]) > 0.999 and pd.v1[5] > 0
    assert abs(pd.v2[9]) > 0.999 and pd.v2[9] > 0
    assert pd.v1 @ pd.v2 == pytest.approx(0.0, abs=1e-12)
    assert not pd.ambiguous
    assert pd.captured_variance > 0.99


def test_pca_ambiguous_and_degenerate():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((20000, 3))
    with pytest.warns(UserWarning):
        assert pca_leading(z).ambiguous
    with pytest.raises(ValueError):
        pca_leading(np.outer(rng.standard_normal(50), np.ones(4)))
    with pytest.raises(ValueError):
        pca_leading(z[:2])


def test_landscape_center_and_shape():
    grid = Grid(32, 32, 3.45e-6, 561e-9)
    plan = make_plan(grid, 0.01)
    probe = synthesize_probe(grid, 20 * grid.pitch, 3 * grid.pitch, 1e4).values
    model = Autoencoder.initialize(SMALL, seed=3)
    pipe = Pipeline(probe, plan, [[0, 0], [6, 4]], 0.09, (40, 40), decoder=model, digit_size=(32, 32),
                    digit_offset=(4, 4))
    h_opt = np.random.default_rng(4).standard_normal(6)
    frames = np.stack([pipe.predict({"latent": h_opt}, j) for j in range(2)])
    v1, v2 = np.eye(6)[0], np.eye(6)[3]
    for kind in ("mixed", "poisson"):
        g = landscape(pipe, frames, h_opt, v1, v2, grid_n=21, span=(-10, 10), loss_kind=kind)
        assert g.losses.shape == (21, 21) and g.center == (10, 10)
        assert g.alphas[10] == 0.0 and g.betas[10] == 0.0
        assert g.losses[10, 10] == pipe.total_loss({"latent": h_opt}, frames, kind)
        assert g.alphas[0] == -10 and g.alphas[-1] == 10
    assert g.losses[10, 10] == 0.0 and g.argmin() == (10, 10)
    assert 0.0 < g.plateau_fraction() <= 1.0
    with pytest.raises(ValueError):
        landscape(pipe, frames, h_opt, v1, v1, grid_n=5)
    with pytest.raises(ValueError):
        landscape(pipe, frames, h_opt, v1, v2, grid_n=4)


def test_landscape_csv(tmp_path):
    from ptylatent.analysis import LandscapeGrid

    g = LandscapeGrid(np.array([-1.0, 0.0, 1.0]), np.array([-1.0, 0.0, 1.0]),
                      np.arange(9.0).reshape(3, 3) / 3, np.eye(2)[0], np.eye(2)[1], np.zeros(2))
    g.write_csv(tmp_path / "l.csv")
    rows = list(csv.reader(open(tmp_path / "l.csv")))
    assert rows[0] == ["alpha", "beta", "loss"] and len(rows) == 10
    assert rows[2] == ["-1.0", "0.0", repr(1 / 3)]
    assert g.plateau_fraction(tol=0.1) == pytest.approx(1 / 9)


def test_interpolation_endpoints(model):
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    imgs = interpolate_latents(model, a, b, 5)
    assert len(imgs) == 5 and imgs[0].shape == (32, 32)
    np.testing.assert_array_equal(imgs[0], model.decode(a)[0, :, :, 0])
    np.testing.assert_array_equal(imgs[-1], model.decode(b)[0, :, :, 0])
    same = interpolate_latents(model, a, a, 3)
    np.testing.assert_allclose(same[1], same[0], atol=1e-12)
    with pytest.raises(ValueError):
        interpolate_latents(model, a, b, 1)


def test_sampling(model):
    rng = np.random.default_rng(6)
    ref = rng.standard_normal((500, 6)) @ np.diag([3, 2, 1, 0.5, 0.1, 0.01])
    draws = gaussian_latents(ref, 20000, seed=1)
    np.testing.assert_allclose(np.cov(draws, rowvar=False), np.cov(ref, rowvar=False), atol=0.15)
    np.testing.assert_array_equal(draws, gaussian_latents(ref, 20000, seed=1))
    # zero covariance: every sample decodes to the mean
    const = np.tile(rng.standard_normal(6), (10, 1))
    for img in sample_latents(model, const, 3, seed=2):
        np.testing.assert_allclose(img, model.decode(const[0])[0, :, :, 0], atol=1e-12)


def test_tile_images():
    sheet = tile_images([np.ones((2, 3)), 2 * np.ones((2, 3)), 3 * np.ones((2, 3))], cols=2)
    assert sheet.shape == (5, 7)
    assert sheet[0, 0] == 1 and sheet[0, 4] == 2 and sheet[3, 0] == 3 and sheet[3, 4] == 0
    assert sheet[2].sum() == 0


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(7).random((5, 9))
    write_pgm(tmp_path / "a.pgm", img)
    back = read_pgm(tmp_path / "a.pgm")
    np.testing.assert_array_equal(back, to_u8(img))
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n9 5\n255\n")
    assert to_u8(np.array([-1.0, 0.5, 2.0])).tolist() == [0, 128, 255]
    (tmp_path / "c.pgm").write_bytes(b"P5\n# note\n2 1\n255\n\x01\x02")
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[1, 2]]
    (tmp_path / "d.pgm").write_bytes(b"P5\n2 2\n255\n\x01")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "d.pgm")
