import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from transrr.errors import InputError, ParameterError
from transrr.loss import LossModel, prox, prox_deriv_c, prox_deriv_x, psi, psi_prime, rho

SH = LossModel()
PH = LossModel("pseudo_huber", delta=1.0)
QT = LossModel("quadratic_test")
ALL = [SH, PH, QT]
C_GRID = [0.0, 0.1, 0.5, 1.0, 5.0]
X_GRID = np.arange(-20, 20.0001, 0.25)


def test_rho_values():
    assert rho(SH, 0.0) == 0.0
    assert rho(SH, 0.5) == pytest.approx(0.125, abs=1e-15)
    assert rho(PH, 0.0) == 0.0


def test_rho_at_two_matches_integral_of_psi():
    integral, _ = quad(lambda t: psi(SH, t), 0, 2, points=[1.25, 1.35], epsabs=1e-13)
    assert rho(SH, 2.0) == pytest.approx(integral, abs=1e-12)
    assert SH.c_rho == pytest.approx(-0.1**2 / 6 + 0.1 * 1.35 / 2 - 1.35**2 / 2, abs=1e-15)
    assert rho(SH, 2.0) == pytest.approx(1.7545833333, abs=1e-9)


def test_psi_values():
    assert psi(SH, 1.0) == 1.0
    assert psi(SH, 5.0) == pytest.approx(1.3)
    assert psi(SH, 1.3) == pytest.approx(1.3 - 0.05**2 / 0.2, abs=1e-14)


def test_psi_prime_values():
    assert psi_prime(SH, 0.0) == 1.0
    assert psi_prime(SH, 10.0) == 0.0
    assert psi_prime(PH, 0.0) == 1.0


@pytest.mark.parametrize("kw", [dict(delta=0.0), dict(delta=-1.0), dict(eta=1.35), dict(eta=2.0), dict(eta=0.0)])
def test_invalid_parameters(kw):
    with pytest.raises(ParameterError):
        LossModel(**kw)


def test_unknown_kind():
    with pytest.raises(ParameterError):
        LossModel("huber")


@pytest.mark.parametrize("m", ALL, ids=lambda m: m.kind)
def test_symmetry_exact(m):
    np.testing.assert_array_equal(rho(m, X_GRID), rho(m, -X_GRID))
    np.testing.assert_array_equal(psi(m, X_GRID) + psi(m, -X_GRID), 0.0)


@pytest.mark.parametrize("m", ALL, ids=lambda m: m.kind)
def test_derivatives_match_finite_differences(m):
    x = X_GRID + 0.0123  # stay off the breakpoints
    h = 1e-6
    fd_rho = (rho(m, x + h) - rho(m, x - h)) / (2 * h)
    np.testing.assert_allclose(psi(m, x), fd_rho, atol=1e-6)
    fd_psi = (psi(m, x + h) - psi(m, x - h)) / (2 * h)
    np.testing.assert_allclose(psi_prime(m, x), fd_psi, atol=1e-5)


def test_psi_prime_lipschitz():
    x = np.linspace(-3, 3, 60001)
    q = np.abs(np.diff(psi_prime(SH, x)) / np.diff(x))
    assert q.max() <= 1 / SH.eta + 1e-6


def test_rho_twice_differentiable_at_breaks():
    for b in (SH.delta - SH.eta, SH.delta):
        for side in (-1e-9, 1e-9):
            assert psi_prime(SH, b + side) == pytest.approx(psi_prime(SH, b), abs=1e-7)
            assert psi(SH, b + side) == pytest.approx(psi(SH, b), abs=1e-8)


def test_prox_examples():
    for m in ALL:
        assert prox(m, 0.0, 3.7) == 3.7
    assert prox(QT, 1.0, 2.0) == 1.0
    assert prox(SH, 1.0, 10.0) == pytest.approx(8.7, abs=1e-14)
    assert prox(SH, 1.0, 2.0) == pytest.approx(1.0, abs=1e-15)


def test_prox_matches_bisection():
    from scipy.optimize import bisect

    for m in ALL:
        for c, x in [(1.0, 10.0), (0.7, 2.2), (3.0, 5.0), (0.3, 1.3), (2.0, -4.1)]:
            ref = bisect(lambda y: y + c * psi(m, y) - x, -abs(x) - 1, abs(x) + 1, xtol=1e-15)
            assert prox(m, c, x) == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("m", ALL, ids=lambda m: m.kind)
def test_prox_grid_contract(m):
    for c in C_GRID:
        y = prox(m, c, X_GRID)
        assert np.max(np.abs(y + c * psi(m, y) - X_GRID)) <= 1e-10
        assert np.all(np.diff(y) >= 0)
        assert np.all(np.abs(y) <= np.abs(X_GRID))
        assert np.all(np.sign(y) == np.sign(X_GRID))


def test_prox_deriv_examples():
    assert prox_deriv_x(SH, 0.0, 4.2) == 1.0
    assert prox_deriv_x(QT, 1.0, -3.3) == 0.5
    assert prox_deriv_x(SH, 2.0, 10.0) == 1.0
    assert prox_deriv_c(SH, 1.5, 0.0) == 0.0
    assert prox_deriv_c(QT, 1.0, 2.0) == pytest.approx(-0.5)
    assert prox_deriv_c(SH, 1.0, 10.0) == pytest.approx(-1.3)


def test_prox_deriv_finite_differences():
    rng = np.random.default_rng(7)
    h = 1e-6
    for m in ALL:
        n_checked = 0
        while n_checked < 100:
            c, x = rng.uniform(0.05, 5), rng.uniform(-10, 10)
            y = prox(m, c, x)
            if m is SH and min(abs(abs(y) - 1.25), abs(abs(y) - 1.35)) < 1e-3:
                continue
            fx = (prox(m, c, x + h) - prox(m, c, x - h)) / (2 * h)
            fc = (prox(m, c + h, x) - prox(m, c - h, x)) / (2 * h)
            assert prox_deriv_x(m, c, x) == pytest.approx(fx, rel=1e-5, abs=1e-9)
            assert prox_deriv_c(m, c, x) == pytest.approx(fc, rel=1e-5, abs=1e-9)
            n_checked += 1


def test_prox_rejects_bad_input():
    with pytest.raises(InputError):
        prox(SH, 1.0, np.nan)
    with pytest.raises(InputError):
        prox(SH, -0.1, 1.0)
    with pytest.raises(InputError):
        prox_deriv_x(PH, np.inf, 1.0)


def test_prox_broadcasts():
    c = np.array([[0.0], [1.0], [4.0]])
    x = np.linspace(-3, 3, 7)
    y = prox(SH, c, x)
    assert y.shape == (3, 7)
    np.testing.assert_allclose(y[1], [prox(SH, 1.0, v) for v in x], atol=0)


@settings(max_examples=300, deadline=None)
@given(kind=st.sampled_from(["smoothed_huber", "pseudo_huber", "quadratic_test"]),
       c=st.floats(0, 50), x=st.floats(-1e4, 1e4),
       delta=st.floats(0.2, 5), frac=st.floats(0.01, 0.9))
def test_prox_fixed_point_property(kind, c, x, delta, frac):
    m = LossModel(kind, delta=delta, eta=frac * delta)
    y = prox(m, c, x)
    assert abs(y + c * psi(m, y) - x) <= 1e-12 * max(1.0, abs(x)) * max(1.0, c)
    assert abs(y) <= abs(x)
    assert y == 0 or np.sign(y) == np.sign(x)
    assert 0 < prox_deriv_x(m, c, x) <= 1


@settings(max_examples=200, deadline=None)
@given(c=st.floats(0, 20), x1=st.floats(-100, 100), x2=st.floats(-100, 100))
def test_prox_monotone_and_nonexpansive(c, x1, x2):
    for m in ALL:
        y1, y2 = prox(m, c, x1), prox(m, c, x2)
        assert (y1 - y2) * (x1 - x2) >= 0
        assert abs(y1 - y2) <= abs(x1 - x2) * (1 + 1e-12) + 1e-12


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-50, 50), c1=st.floats(0, 10), dc=st.floats(0, 10))
def test_prox_shrinks_more_as_c_grows(x, c1, dc):
    for m in ALL:
        assert abs(prox(m, c1 + dc, x)) <= abs(prox(m, c1, x)) + 1e-12
