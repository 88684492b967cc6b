import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptylatent.field import ComplexField, Grid
from ptylatent.optics import (band_limits, circular_profile, exit_wave, intensity, make_plan, propagate,
                              propagate_adjoint, rayleigh_sommerfeld, synthesize_probe)

LAM, PITCH = 561e-9, 3.45e-6
GRID = Grid(64, 64, PITCH, LAM)


def band_limited_field(grid, plan, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return np.fft.ifft2(np.fft.fft2(u) * plan.band_mask)


def test_plan_invariants():
    plan = make_plan(GRID, 0.01)
    np.testing.assert_allclose(np.abs(plan.transfer[plan.band_mask]), 1.0, atol=1e-15)
    assert np.all(plan.transfer[~plan.band_mask] == 0)
    back = make_plan(GRID, -0.01)
    np.testing.assert_array_equal(back.band_mask, plan.band_mask)
    np.testing.assert_allclose(back.transfer, np.conj(plan.transfer), atol=1e-15)


def test_zero_distance_is_identity_on_band():
    plan = make_plan(GRID, 0.0)
    assert np.all(plan.transfer[plan.band_mask] == 1.0)


@pytest.mark.parametrize("z", [1e-3, 0.01, 0.05, 0.08, -0.02])
def test_dc_phase(z):
    h0 = make_plan(GRID, z).transfer[0, 0]
    expected = np.exp(1j * 2 * np.pi * z / LAM)
    assert abs(h0 - expected) < 1e-12


def test_band_limit_formula():
    z = 0.08
    g = Grid(256, 128, PITCH, LAM)
    fx, fy = band_limits(g, z)
    assert fx == pytest.approx(1 / (LAM * np.sqrt((2 * z / (256 * PITCH)) ** 2 + 1)), rel=1e-15)
    assert fy == pytest.approx(1 / (LAM * np.sqrt((2 * z / (128 * PITCH)) ** 2 + 1)), rel=1e-15)
    plan = make_plan(g, z)
    f_x, f_y = g.frequencies()
    inside = (np.abs(f_x) <= fx) & (np.abs(f_y) <= fy)
    np.testing.assert_array_equal(plan.band_mask, inside)


def test_constant_field():
    plan = make_plan(GRID, 0.05)
    out = propagate(np.full(GRID.shape, 0.7 - 0.2j), plan)
    np.testing.assert_allclose(out, (0.7 - 0.2j) * np.exp(1j * 2 * np.pi * 0.05 / LAM), atol=1e-12)


def test_round_trip_and_energy():
    plan = make_plan(GRID, 0.01)
    rng = np.random.default_rng(3)
    u = rng.standard_normal(GRID.shape) + 1j * rng.standard_normal(GRID.shape)
    back = propagate(propagate(u, plan), plan.reverse())
    filtered = np.fft.ifft2(np.fft.fft2(u) * plan.band_mask)
    assert np.max(np.abs(back - filtered)) < 1e-10
    v = band_limited_field(GRID, plan, 4)
    e0, e1 = intensity(v).sum(), intensity(propagate(v, plan)).sum()
    assert abs(e1 - e0) / e0 < 1e-12


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2 ** 31), st.floats(-0.1, 0.1))
def test_linearity_and_adjoint(seed, z):
    plan = make_plan(GRID, z)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2,) + GRID.shape) + 1j * rng.standard_normal((2,) + GRID.shape)
    a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    lhs = propagate(a * u + b * v, plan)
    np.testing.assert_allclose(lhs, a * propagate(u, plan) + b * propagate(v, plan), atol=1e-12)
    # <A u, v> = <u, A^H v>
    assert abs(np.vdot(v, propagate(u, plan)) - np.vdot(propagate_adjoint(v, plan), u)) < 1e-9


def test_batched_propagation():
    plan = make_plan(GRID, 0.01)
    stack = np.random.default_rng(0).standard_normal((3,) + GRID.shape).astype(complex)
    out = propagate(stack, plan)
    for k in range(3):
        np.testing.assert_allclose(out[k], propagate(stack[k], plan), atol=1e-14)


def test_grid_mismatch_rejected():
    plan = make_plan(GRID, 0.01)
    with pytest.raises(ValueError):
        propagate(ComplexField(Grid(32, 32, PITCH, LAM), np.ones((32, 32))), plan)
    with pytest.raises(ValueError):
        propagate(np.ones((32, 32)), plan)


def test_matches_rayleigh_sommerfeld():
    # Apodized 8-pixel disk; compared inside the region where the sampled
    # direct kernel is itself free of aliasing and grid wrap-around.
    u = circular_profile(GRID, 8 * PITCH, 4 * PITCH).astype(complex)
    a = propagate(u, make_plan(GRID, 1e-3))
    b = rayleigh_sommerfeld(u, GRID, 1e-3)
    c = slice(16, 48)
    assert np.max(np.abs(a[c, c] - b[c, c])) / np.max(np.abs(b[c, c])) < 1e-3


def test_exit_wave_examples():
    probe = np.array([[1, 1j], [-1, 2]])
    obj = np.array([[1, 0], [0.5, 1]])
    np.testing.assert_array_equal(exit_wave(probe, obj, (0, 0)), [[1, 0], [-0.5, 2]])
    big = np.ones((5, 5), complex)
    np.testing.assert_array_equal(exit_wave(probe, big, (2, 3)), probe)
    np.testing.assert_array_equal(exit_wave(np.zeros((2, 2)), big, (0, 0)), 0)
    with pytest.raises(IndexError):
        exit_wave(probe, big, (4, 4))


def test_intensity():
    assert intensity(np.array([3 + 4j]))[0] == 25.0
    assert not intensity(np.zeros((3, 3), complex)).any()
    u = np.random.default_rng(5).standard_normal((16, 16)) * (1 + 0.5j)
    spec = np.fft.fft2(u)
    assert intensity(u).sum() == pytest.approx(np.sum(np.abs(spec) ** 2) / u.size, rel=1e-12)


def test_probe_normalization_and_support():
    g = Grid(128, 128, PITCH, LAM)
    d, w = 60 * PITCH, 5 * PITCH
    probe = synthesize_probe(g, d, w, 1e6)
    assert abs(probe.photons - 1e6) / 1e6 < 1e-9
    mask = circular_profile(g, d, w)
    eff_area = np.sum(mask ** 2)
    assert abs(probe.values[64, 64]) == pytest.approx(np.sqrt(1e6 / eff_area), rel=1e-12)
    x, y = g.coordinates()
    r = np.sqrt(x ** 2 + y ** 2)
    assert np.all(probe.values[r > d / 2 + w] == 0)
    assert np.all(probe.values.imag == 0)
    with pytest.raises(ValueError):
        synthesize_probe(g, 200 * PITCH)
    with pytest.raises(ValueError):
        synthesize_probe(g, d, w, 0.0)
