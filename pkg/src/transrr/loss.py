"""Robust losses with bounded influence and their proximal mappings.

Every function here is vectorised over ``x`` (and over ``c`` for the prox
family) with ordinary numpy broadcasting, and returns a float or ndarray
matching the broadcast shape.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError

KINDS = ("smoothed_huber", "pseudo_huber", "quadratic_test")


@dataclass(frozen=True)
class LossModel:
    """A convex, even loss ``rho`` with derivatives ``psi`` and ``psi_prime``.

    ``delta`` is the Huber knee and ``eta`` the width of the cubic blend
    (smoothed_huber only).  ``quadratic_test`` is ``x**2 / 2``; its ``psi``
    is unbounded so the risk solver refuses it unless explicitly allowed.
    """

    kind: str = "smoothed_huber"
    delta: float = 1.35
    eta: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.delta) or self.delta <= 0:
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if self.kind == "smoothed_huber":
            if not np.isfinite(self.eta) or self.eta <= 0:
                raise ParameterError(f"eta must be positive, got {self.eta}")
            if self.eta >= self.delta:
                raise ParameterError(f"eta must be < delta, got eta={self.eta}, delta={self.delta}")

    @property
    def psi_max(self):
        """sup |psi| (infinite for the quadratic loss)."""
        if self.kind == "smoothed_huber":
            return self.delta - self.eta / 2
        if self.kind == "pseudo_huber":
            return self.delta
        return np.inf

    @property
    def bounded(self):
        return np.isfinite(self.psi_max)

    @property
    def c_rho(self):
        d, e = self.delta, self.eta
        return -e * e / 6 + e * d / 2 - d * d / 2

    def rho(self, x):
        return rho(self, x)

    def psi(self, x):
        return psi(self, x)

    def psi_prime(self, x):
        return psi_prime(self, x)

    def prox(self, c, x):
        return prox(self, c, x)


def _as_float(a):
    out = np.asarray(a, dtype=float)
    return out if out.ndim else float(out)


def rho(model, x):
    x = np.asarray(x, dtype=float)
    if model.kind == "quadratic_test":
        return _as_float(0.5 * x * x)
    d = model.delta
    if model.kind == "pseudo_huber":
        # d^2 (sqrt(1 + t^2) - 1) written to avoid cancellation near 0
        t2 = (x / d) ** 2
        return _as_float(d * d * t2 / (np.sqrt(1 + t2) + 1))
    e = model.eta
    a = np.abs(x)
    lin = (d - e / 2) * a + model.c_rho
    out = np.where(a <= d - e, 0.5 * x * x, np.where(a < d, lin + (d - a) ** 3 / (6 * e), lin))
    return _as_float(out)


def psi(model, x):
    x = np.asarray(x, dtype=float)
    if model.kind == "quadratic_test":
        return _as_float(x.copy())
    d = model.delta
    if model.kind == "pseudo_huber":
        return _as_float(x / np.sqrt(1 + (x / d) ** 2))
    e = model.eta
    a = np.abs(x)
    s = np.sign(x)
    sat = d - e / 2
    out = np.where(a <= d - e, x, np.where(a < d, s * (sat - (d - a) ** 2 / (2 * e)), s * sat))
    return _as_float(out)


def psi_prime(model, x):
    x = np.asarray(x, dtype=float)
    if model.kind == "quadratic_test":
        return _as_float(np.ones_like(x))
    d = model.delta
    if model.kind == "pseudo_huber":
        return _as_float((1 + (x / d) ** 2) ** -1.5)
    e = model.eta
    a = np.abs(x)
    # inner-branch values at the two breakpoints: 1 at d - e, 0 at d
    out = np.where(a <= d - e, 1.0, np.where(a < d, (d - a) / e, 0.0))
    return _as_float(out)


def _check_prox_args(c, x):
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(x))):
        raise InputError("prox arguments must be finite")
    if np.any(c < 0):
        raise InputError("prox scale c must be nonnegative")
    return np.broadcast_arrays(c, x)


def _prox_smoothed_huber(model, c, x):
    d, e = model.delta, model.eta
    a = np.abs(x)
    s = np.sign(x)
    lo = (d - e) * (1 + c)
    hi = d + c * (d - e / 2)
    y = x / (1 + c)
    sat = a >= hi
    y = np.where(sat, s * (a - c * (d - e / 2)), y)
    blend = (a > lo) & ~sat
    if np.any(blend):
        cb, ab = c[blend], a[blend]
        # with u = d - |y| the blend branch reduces to (c/2e) u^2 + u - k = 0
        k = d * (1 + cb) - cb * e / 2 - ab
        u = 2 * k / (1 + np.sqrt(1 + 2 * cb * k / e))
        y[blend] = s[blend] * (d - u)
    return y


def _prox_newton(model, c, x, tol=1e-15, max_iter=100):
    """Safeguarded Newton on g(y) = y + c psi(y) - |x| over a monotone bracket."""
    a = np.abs(x)
    lo = np.maximum(a / (1 + c), a - c * model.psi_max)
    hi = a.copy()
    y = lo.copy()
    for _ in range(max_iter):
        g = y + c * psi(model, y) - a
        hi = np.where(g > 0, y, hi)
        lo = np.where(g <= 0, y, lo)
        step = g / (1 + c * psi_prime(model, y))
        y_new = y - step
        outside = (y_new < lo) | (y_new > hi)
        y_new = np.where(outside, 0.5 * (lo + hi), y_new)
        if np.all(np.abs(y_new - y) <= tol * np.maximum(1.0, a)):
            y = y_new
            break
        y = y_new
    return np.sign(x) * y


def prox(model, c, x):
    """prox(c rho)(x): the unique y with y + c psi(y) = x."""
    c, x = _check_prox_args(c, x)
    if model.kind == "quadratic_test":
        y = x / (1 + c)
    elif model.kind == "smoothed_huber":
        y = _prox_smoothed_huber(model, c, x.copy())
    else:
        y = _prox_newton(model, c, x)
    # the exact map shrinks; clip the last-ulp overshoot of the closed forms
    y = np.where(np.abs(y) > np.abs(x), x, y)
    return _as_float(y)


def prox_deriv_x(model, c, x):
    """d/dx prox(c rho)(x) = 1 / (1 + c psi'(prox))."""
    c, x = _check_prox_args(c, x)
    y = prox(model, c, x)
    return _as_float(1.0 / (1.0 + c * psi_prime(model, y)))


def prox_deriv_c(model, c, x):
    """d/dc prox(c rho)(x) = -psi(prox) / (1 + c psi'(prox))."""
    c, x = _check_prox_args(c, x)
    y = prox(model, c, x)
    return _as_float(-psi(model, y) / (1.0 + c * psi_prime(model, y)))
