import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reganet import tensor as T
from reganet.gabor import GaborParams, gabor_real, init_lattice, patch_grid, sample_patch

from oracles import gabor_scalar

finite = st.floats(-50, 50, allow_nan=False)


def params(omega=math.pi / 2, phi=0.0, sigma=2.0, theta=0.0):
    return GaborParams.create(omega, phi, sigma, theta)


def test_center_value_is_one():
    assert gabor_real(0, 0, params(omega=1.3, sigma=0.7, theta=2.0)).item() == 1.0


def test_quadrature_null():
    assert gabor_real(1, 0, params()).item() == pytest.approx(0.0, abs=1e-15)


def test_half_period_value():
    # e^{-1/2} cos(pi), evaluated to 30 digits with mpmath
    assert gabor_real(2, 0, params()).item() == pytest.approx(-0.606530659712633423603799534991, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(0.01, 10), st.floats(-10, 10), st.floats(0.05, 20), st.floats(-10, 10))
def test_bounded(x, y, omega, phi, sigma, theta):
    assert abs(gabor_real(x, y, params(omega, phi, sigma, theta)).item()) <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 3), st.floats(0.3, 6), st.floats(-4, 4))
def test_pi_shift_symmetry(x, y, omega, sigma, theta):
    a = gabor_real(x, y, params(omega, 0.0, sigma, theta)).item()
    b = gabor_real(x, y, params(omega, 0.0, sigma, theta + math.pi)).item()
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 3), st.floats(0.3, 6), st.floats(-4, 4))
def test_phase_identity(x, y, omega, sigma, theta):
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    env = math.exp(-(xr ** 2 + yr ** 2) / (2 * sigma ** 2))
    got = gabor_real(x, y, params(omega, math.pi / 2, sigma, theta)).item()
    assert got == pytest.approx(-math.sin(omega * xr) * env, abs=1e-12)


def test_sigma_monotone_envelope():
    # fixed carrier (phi=0, omega x' = 0 mod 2pi via x' chosen on a crest)
    vals = [gabor_real(2.0, 1.0, params(omega=math.pi, sigma=s)).item() for s in (0.5, 1, 2, 4, 8)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_gradcheck_random_draws(rng):
    worst = 0.0
    for _ in range(50):
        p = params(rng.uniform(0.2, 2), rng.uniform(0, math.pi), rng.uniform(0.8, 5), rng.uniform(0, 2 * math.pi))
        x, y = rng.uniform(-3, 3, 2)
        gabor_real(x, y, p).backward()
        for leaf in p.leaves().values():
            orig = leaf.data.item()
            leaf.data[()] = orig + 1e-5
            up = gabor_real(x, y, p).item()
            leaf.data[()] = orig - 1e-5
            down = gabor_real(x, y, p).item()
            leaf.data[()] = orig
            num = (up - down) / 2e-5
            worst = max(worst, abs(leaf.grad - num) / max(1.0, abs(leaf.grad)))
    assert worst < 1e-4


def test_lattice():
    lat = init_lattice()
    assert len(lat) == 40
    assert [(e.n, e.m) for e in lat] == [(n, m) for n in range(1, 6) for m in range(1, 9)]
    assert lat[0].omega == pytest.approx(math.pi / 2, abs=1e-12) and lat[0].theta == 0
    assert lat[16].omega == pytest.approx(math.pi / 4, abs=1e-12)
    assert lat[7].theta == pytest.approx(7 * math.pi / 8, abs=1e-12)
    for e in lat:
        assert e.omega == pytest.approx(math.pi / 2 * math.sqrt(2) ** -(e.n - 1), abs=1e-15)


def test_patch_grid_orientation():
    x, y = patch_grid(7)
    assert x[0, 6] == 3 and y[6, 0] == 3 and x[3, 3] == 0 and y[3, 3] == 0


def test_patch_matches_scalar_oracle():
    patch = sample_patch(params(), 7).data
    c = 3
    for i in range(7):
        for j in range(7):
            assert patch[i, j] == pytest.approx(gabor_scalar(j - c, i - c, math.pi / 2, 0, 2, 0), abs=1e-12)
    assert patch[3, 3] == 1.0


def test_patch_row_reflection_when_theta_zero():
    patch = sample_patch(params(omega=1.1, sigma=1.7), 7).data
    np.testing.assert_allclose(patch, patch[::-1], atol=1e-15)


def test_patch_is_graph_connected():
    p = params(phi=0.3)
    T.tsum(sample_patch(p, 5)).backward()
    assert all(leaf.grad is not None for leaf in p.leaves().values())


@pytest.mark.parametrize("size", [1, 2, 4, 6])
def test_bad_patch_sizes(size):
    with pytest.raises(ValueError):
        sample_patch(params(), size)


def test_clamp_keeps_sigma_in_window():
    p = params()
    p.sigma_raw.data[()] = 50.0
    p.omega_raw.data[()] = -50.0
    p.clamp_()
    assert 1e-3 <= p.sigma.item() <= 1e3
    assert 1e-3 <= p.omega.item() <= 1e3


def test_nonpositive_omega_rejected():
    with pytest.raises(ValueError):
        params(omega=0.0)
