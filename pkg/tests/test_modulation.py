import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdvexit.modulation import (
    DecompositionResult,
    Decomposer,
    decompose,
    exit_check_fixed,
    exit_check_modulated,
    operational_alpha0,
)
from kdvexit.soliton import SolitonParams, soliton_profile
from kdvexit.spectral import SpectralField, derivative, inner_l2, make_grid, norm_h1, norm_l2, shift

GRID = make_grid(1024, 80 * math.pi)
PHI0 = soliton_profile(SolitonParams(1.0), GRID)
PHI0_X = derivative(PHI0, 1)


def bump(center=2.0, width=1.5):
    w = SpectralField.from_function(GRID, lambda x: np.exp(-(((x - center) / width) ** 2)))
    return w * (1.0 / norm_h1(w))


def check_orthogonality(r: DecompositionResult):
    tol = 1e-9 * norm_l2(PHI0) * max(norm_l2(r.eta), 1e-300)
    assert abs(inner_l2(r.eta, PHI0)) <= max(tol, 1e-10)
    assert abs(inner_l2(r.eta, PHI0_X)) <= max(tol, 1e-10)
    assert max(abs(r.residual[0]), abs(r.residual[1])) <= 1e-10


def test_exact_soliton_is_a_root():
    u = soliton_profile(SolitonParams(1.3, 0.7), GRID)
    r = decompose(u, SolitonParams(1.3, 0.7), 1.0)
    assert r.converged
    assert r.newton_iters <= 1
    assert r.c == pytest.approx(1.3, abs=1e-12)
    assert r.x0 == pytest.approx(0.7, abs=1e-12)
    assert r.eta_h1 < 1e-10


def test_recovers_planted_parameters_from_cold_guess():
    u = soliton_profile(SolitonParams(1.1, 0.3), GRID)
    r = decompose(u, SolitonParams(1.0, 0.0), 1.0)
    assert r.converged
    assert r.c == pytest.approx(1.1, abs=1e-8)
    assert r.x0 == pytest.approx(0.3, abs=1e-8)


def test_small_perturbation():
    u = PHI0 + 0.01 * bump()
    r = decompose(u, SolitonParams(1.0), 1.0)
    assert r.converged
    check_orthogonality(r)
    assert r.eta_h1 <= 0.011


def test_translation_equivariance():
    u = PHI0 + 0.02 * bump(1.0)
    r = decompose(u, SolitonParams(1.0), 1.0)
    for s in (-5.0, -1.3, 2.0, 5.0):
        rs = decompose(shift(u, -s), SolitonParams(1.0, s), 1.0)
        assert rs.c == pytest.approx(r.c, abs=1e-9)
        assert rs.x0 == pytest.approx(r.x0 + s, abs=1e-9)
        np.testing.assert_allclose(rs.eta.values, r.eta.values, atol=1e-9)


def test_batched_rows_are_independent():
    dec = Decomposer(GRID, 1.0)
    us = np.stack([(PHI0 + a * bump(b)).rcoefficients for a, b in ((0.01, 1.0), (0.05, -2.0), (0.0, 0.0))])
    together = dec.solve(us, 1.0, 0.0)
    for i in range(3):
        alone = dec.solve(us[i : i + 1], 1.0, 0.0)
        assert alone.c[0] == together.c[i]
        assert alone.x0[0] == together.x0[i]
        assert alone.newton_iters[0] == together.newton_iters[i]


def test_failure_is_reported_not_raised():
    far = SpectralField(GRID, np.zeros(GRID.n_points))
    r = decompose(far, SolitonParams(1.0), 1.0)
    assert not r.converged
    assert exit_check_modulated(r, 0.2, 1.0)
    with pytest.raises(ValueError):
        Decomposer(GRID, 0.0)


def test_exit_check_modulated():
    exact = decompose(PHI0, SolitonParams(1.0), 1.0)
    assert not exit_check_modulated(exact, 0.2, 1.0)
    # the boundary |c - c0| = alpha counts as an exit (binary-exact values)
    at_boundary = DecompositionResult(1.25, 0.0, PHI0, 0.0, 1, True)
    assert exit_check_modulated(at_boundary, 0.25, 1.0)
    big_eta = DecompositionResult(1.0, 0.0, PHI0, 0.25, 1, True)
    assert exit_check_modulated(big_eta, 0.2, 1.0)
    with pytest.raises(ValueError):
        exit_check_modulated(exact, 0.0, 1.0)


def test_exit_check_fixed():
    assert not exit_check_fixed(PHI0, 0.2, 1.0)
    assert exit_check_fixed(PHI0 + 1.01 * 0.2 * bump(), 0.2, 1.0)
    assert not exit_check_fixed(PHI0 + 0.99 * 0.2 * bump(), 0.2, 1.0)
    with pytest.raises(ValueError):
        exit_check_fixed(PHI0, -1.0, 1.0)


def _shift_distance_oracle(delta):
    from scipy.integrate import quad

    def f(x):
        def phi(y):
            return 1.5 / math.cosh(0.5 * y) ** 2

        def phix(y):
            return -1.5 * math.tanh(0.5 * y) / math.cosh(0.5 * y) ** 2

        return (phi(x - delta) - phi(x)) ** 2 + (phix(x - delta) - phix(x)) ** 2

    val, _ = quad(f, -60, 60, epsabs=0.0, epsrel=1e-12, limit=400, points=[0.0, delta])
    return math.sqrt(val)


def test_fixed_exit_under_translation_matches_quadrature():
    alpha = 0.2
    # distance at a few shifts against the quadrature oracle
    for delta in (0.05, 0.1, 0.2):
        u = soliton_profile(SolitonParams(1.0, delta), GRID)
        assert norm_h1(u - PHI0) == pytest.approx(_shift_distance_oracle(delta), rel=1e-8)
    # critical shift from the oracle, then the detector on either side of it
    from scipy.optimize import brentq

    crit = brentq(lambda d: _shift_distance_oracle(d) - alpha, 1e-3, 1.0, xtol=1e-12)
    assert not exit_check_fixed(soliton_profile(SolitonParams(1.0, crit * (1 - 1e-6)), GRID), alpha, 1.0)
    assert exit_check_fixed(soliton_profile(SolitonParams(1.0, crit * (1 + 1e-6)), GRID), alpha, 1.0)


def test_operational_alpha0():
    a0 = operational_alpha0(GRID, 1.0)
    # the basin reaches the cap c0 in every probe direction on this grid
    assert a0 == pytest.approx(1.0)
    assert operational_alpha0(GRID, 1.0, upper=50.0, resolution=0.05) < 50.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.1))
def test_orthogonality_on_random_perturbations(seed, size):
    rng = np.random.default_rng(seed)
    x = GRID.x
    w = sum(rng.normal() * np.exp(-((x - rng.uniform(-8, 8)) ** 2) / rng.uniform(0.5, 6)) for _ in range(5))
    w = SpectralField(GRID, w)
    u = PHI0 + size * (w * (1.0 / norm_h1(w)))
    r = decompose(u, SolitonParams(1.0), 1.0)
    assert r.converged
    check_orthogonality(r)
    assert r.eta_h1 <= 3 * size + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.9), st.floats(0.01, 0.9), st.floats(0.0, 0.5))
def test_exit_monotone_in_alpha(a1, a2, dist):
    lo, hi = sorted((a1, a2))
    u = PHI0 + dist * bump(0.5)
    if exit_check_fixed(u, hi, 1.0):
        assert exit_check_fixed(u, lo, 1.0)
    d = decompose(u, SolitonParams(1.0), 1.0)
    if exit_check_modulated(d, hi, 1.0):
        assert exit_check_modulated(d, lo, 1.0)
