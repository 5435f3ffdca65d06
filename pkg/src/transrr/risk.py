"""Deterministic limit of the Trans-RR estimation error.

For W = eps + r * lam * Z (Z standard normal) and the loss rho, the pair
(r, c) solves

    E[ prox(c lam^2 rho)'(W) ]                         = 1 - kappa + tau c
    kappa E[ c^2 lam^2 psi(prox(c lam^2 rho)(W))^2 ] + tau^2 D^2 c^2 = kappa^2 r^2

where expectations also average over a finite mixture of (eps, lam) laws
and D is the norm of the offset error (beta0 - w_hat for the target stage,
w0 for the source stage, zero for a single-study fit).

Expectations are computed by nested quadrature.  Given lam and eps the
Gaussian average over Z is done piecewise between the kinks of the
integrand: the linear and saturated pieces of the smoothed Huber prox have
closed-form Gaussian integrals, and only the short blend interval is
integrated numerically (composite Gauss-Legendre).  Outer averages over
eps and lam use Gauss-Hermite, Gauss-Legendre, or Gauss-Legendre after
the substitution eps = s tan(u) for Cauchy laws.
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq
from scipy.special import ndtr, voigt_profile

from .errors import AccuracyError, ConvergenceError, InputError, ModelError, ParameterError
from .loss import LossModel, prox, psi, psi_prime

DIST_KINDS = ("point_mass", "gaussian", "cauchy", "uniform")
_SQRT2PI = np.sqrt(2 * np.pi)

RESIDUAL_TOL = 1e-8
REFINE_TOL = 1e-9
MAX_LEVEL = 3


@lru_cache(maxsize=None)
def _hermite(n):
    x, w = hermegauss(n)
    return x, w / _SQRT2PI


@lru_cache(maxsize=None)
def _legendre(n):
    return leggauss(n)


def _gl_on(a, b, n):
    x, w = _legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1), half * w


@dataclass(frozen=True)
class ScalarDist:
    """Law of a scalar error or design scale.

    ``point_mass(value)``, ``gaussian(sigma)`` (centred), ``cauchy(scale)``
    (centred) or ``uniform(lo, hi)``.
    """

    kind: str
    value: float = 0.0
    sigma: float = 1.0
    scale: float = 1.0
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise ParameterError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ParameterError("gaussian sigma must be positive")
        if self.kind == "cauchy" and not self.scale > 0:
            raise ParameterError("cauchy scale must be positive")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise ParameterError("uniform requires lo < hi")

    @classmethod
    def point_mass(cls, value):
        return cls("point_mass", value=float(value))

    @classmethod
    def gaussian(cls, sigma):
        return cls("gaussian", sigma=float(sigma))

    @classmethod
    def cauchy(cls, scale):
        return cls("cauchy", scale=float(scale))

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", lo=float(lo), hi=float(hi))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", None)
        allowed = {"point_mass": {"value"}, "gaussian": {"sigma"}, "cauchy": {"scale"}, "uniform": {"lo", "hi"}}
        if kind not in allowed:
            raise InputError(f"unknown distribution kind {kind!r}")
        extra = set(d) - allowed[kind]
        if extra:
            raise InputError(f"unexpected keys for {kind}: {sorted(extra)}")
        return cls(kind, **{k: float(v) for k, v in d.items()})

    def to_dict(self):
        keys = {"point_mass": ("value",), "gaussian": ("sigma",), "cauchy": ("scale",), "uniform": ("lo", "hi")}
        return {"kind": self.kind, **{k: getattr(self, k) for k in keys[self.kind]}}

    @property
    def spread(self):
        return {"point_mass": 0.0, "gaussian": self.sigma, "cauchy": self.scale,
                "uniform": (self.hi - self.lo) / np.sqrt(12.0)}[self.kind]

    @property
    def contains_zero(self):
        if self.kind == "point_mass":
            return self.value == 0
        if self.kind == "uniform":
            return self.lo <= 0 <= self.hi
        return True

    @property
    def abs_bound(self):
        if self.kind == "point_mass":
            return abs(self.value)
        if self.kind == "uniform":
            return max(abs(self.lo), abs(self.hi))
        return np.inf

    def rule(self, level=0, breaks=()):
        """Quadrature nodes and weights (weights sum to 1).

        ``breaks`` are points where the integrand may have kinks; panels of
        the Legendre rules are split there.
        """
        if self.kind == "point_mass":
            return np.array([self.value]), np.array([1.0])
        if self.kind == "gaussian":
            x, w = _hermite(60 * 2 ** level + 1)
            return self.sigma * x, w
        if self.kind == "uniform":
            edges = np.unique(np.concatenate([[self.lo, self.hi],
                                              [b for b in breaks if self.lo < b < self.hi]]))
            q = 32 * 2 ** level
            parts = [_gl_on(a, b, q) for a, b in zip(edges[:-1], edges[1:])]
            x = np.concatenate([p[0] for p in parts])
            w = np.concatenate([p[1] for p in parts]) / (self.hi - self.lo)
            return x, w
        # cauchy: eps = s tan(u) with u uniform on (-pi/2, pi/2)
        ub = [np.arctan(b / self.scale) for b in breaks]
        edges = np.unique(np.concatenate([[-np.pi / 2, np.pi / 2], ub]))
        total = 200 * 2 ** level
        parts = []
        for a, b in zip(edges[:-1], edges[1:]):
            q = max(16, int(np.ceil(total * (b - a) / np.pi)))
            parts.append(_gl_on(a, b, q))
        u = np.concatenate([p[0] for p in parts])
        w = np.concatenate([p[1] for p in parts]) / np.pi
        return self.scale * np.tan(u), w


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    eps: ScalarDist
    lam: ScalarDist

    def __post_init__(self):
        if not 0 < self.weight <= 1:
            raise ParameterError(f"mixture weight must lie in (0, 1], got {self.weight}")


@dataclass(frozen=True)
class PopulationSpec:
    """Asymptotic problem: aspect ratio kappa = p/n, ridge tau, offset-error
    norm D and the mixture of (eps, lam) laws.

    ``allow_unbounded`` admits the quadratic test loss (unbounded psi),
    which is otherwise rejected.
    """

    kappa: float
    tau: float
    discrepancy: float
    components: tuple
    loss: LossModel = field(default_factory=LossModel)
    allow_unbounded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.kappa > 0:
            raise ParameterError("kappa must be positive")
        if not self.tau > 0:
            raise ParameterError("tau must be positive")
        if not self.discrepancy >= 0:
            raise ParameterError("discrepancy must be nonnegative")
        if not self.components:
            raise ParameterError("need at least one mixture component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1) > 1e-12:
            raise ParameterError(f"mixture weights sum to {total!r}, not 1")

    def with_discrepancy(self, d):
        return replace(self, discrepancy=float(d))

    @property
    def c_max(self):
        return self.kappa / self.tau


@dataclass
class RiskSolution:
    r: float
    c: float
    residual1: float
    residual2: float
    iterations: int
    discrepancy: float = 0.0
    level: int = 0
    starts: list = field(default_factory=list)

    @property
    def r2(self):
        return self.r * self.r


def _smoothed_huber_breaks(loss, ceff):
    d, e = loss.delta, loss.eta
    a1 = (d - e) * (1 + ceff)
    a2 = d + ceff * (d - e / 2)
    return a1, a2


def _gauss_piecewise(loss, c, ceff, lam2, m, s, level):
    """E over W ~ N(m, s^2) of the two integrands, smoothed Huber only."""
    a1, a2 = _smoothed_huber_breaks(loss, ceff)
    smax = loss.psi_max
    k2 = c * c * lam2
    al, bl = (-a1 - m) / s, (a1 - m) / s
    p_lin = ndtr(bl) - ndtr(al)
    p_sat = ndtr((-a2 - m) / s) + ndtr((m - a2) / s)
    phi_a, phi_b = np.exp(-0.5 * al * al) / _SQRT2PI, np.exp(-0.5 * bl * bl) / _SQRT2PI
    m2_lin = (m * m + s * s) * p_lin + 2 * m * s * (phi_a - phi_b) + s * s * (al * phi_a - bl * phi_b)
    e1 = p_lin / (1 + ceff) + p_sat
    e2 = k2 * (m2_lin / (1 + ceff) ** 2 + smax * smax * p_sat)

    # blend branch: integrate in y = prox(w), where w = y + ceff psi(y) is a
    # polynomial map; in w the integrand has a square-root singularity nearby
    panels = int(min(64, max(1, np.ceil((a2 - a1) / s))))
    yg, yw = _panel_rule(loss.delta - loss.eta, loss.delta, panels, 8 * 2 ** level)
    py = psi(loss, yg)
    jac = 1.0 + ceff * psi_prime(loss, yg)
    w_nodes = yg + ceff * py
    # integrands are even in w, so both blend intervals share the nodes
    zp = (w_nodes[None, :] - m[:, None]) / s
    zn = (-w_nodes[None, :] - m[:, None]) / s
    dens = (np.exp(-0.5 * zp * zp) + np.exp(-0.5 * zn * zn)) * (yw / (s * _SQRT2PI))
    return e1 + dens.sum(axis=1), e2 + dens @ (k2 * py * py * jac)


def _panel_rule(a, b, panels, q):
    xg, wg = _legendre(q)
    h = (b - a) / panels
    left = a + h * np.arange(panels)
    return (left[:, None] + 0.5 * h * (xg[None, :] + 1)).ravel(), np.tile(0.5 * h * wg, panels)


def _pointwise(loss, c, ceff, lam2, w):
    y = prox(loss, ceff, w)
    return 1.0 / (1.0 + ceff * psi_prime(loss, y)), c * c * lam2 * psi(loss, y) ** 2


def _gauss_generic(loss, c, ceff, lam2, m, s, level):
    # composite rule over +-10 sd, panels no wider than the loss's own scale
    h = min(s, loss.delta)
    panels = int(min(400, np.ceil(20 * s / h)))
    z, wz = _panel_rule(-10 * s, 10 * s, panels, 8 * 2 ** level)
    wz = wz * np.exp(-0.5 * (z / s) ** 2) / (s * _SQRT2PI)
    f1, f2 = _pointwise(loss, c, ceff, lam2, m[:, None] + z[None, :])
    return f1 @ wz, f2 @ wz


def _conditional(loss, c, ceff, lam2, m, s, level):
    if s == 0:
        return _pointwise(loss, c, ceff, lam2, m)
    if loss.kind == "smoothed_huber":
        return _gauss_piecewise(loss, c, ceff, lam2, m, s, level)
    return _gauss_generic(loss, c, ceff, lam2, m, s, level)


def _cauchy_conditional(loss, c, lam, scale, r, level):
    """E over W = eps + r lam Z with eps ~ Cauchy(0, scale), one value per lam.

    W has a Voigt density, so the average is a one-dimensional integral over
    w >= 0 (both integrands are even).  The half line is mapped by
    w = g tan(u) and split at the kinks of the integrand.
    """
    lam2 = lam * lam
    ceff = c * lam2
    s = r * np.abs(lam)
    g = scale + s
    xg, wg = _legendre(32 * 2 ** level)
    E1 = np.zeros(lam.size)
    E2 = np.zeros(lam.size)

    def mapped(lo, hi, split=True):
        if not split:
            return panel(lo, hi)
        # geometric knots g 2^k keep each panel a fixed distance from the
        # pole of tan relative to its length
        top = max(np.max(lo), np.max(hi[np.isfinite(hi)], initial=0.0))
        K = int(np.clip(np.ceil(np.log2(max(top, 1e-300) / g.min())) + 1, 0, 60))
        pts = [lo] + [np.clip(g * 2.0 ** k, lo, hi) for k in range(K)] + [hi]
        parts = [panel(a, b) for a, b in zip(pts[:-1], pts[1:])]
        return sum(p[0] for p in parts), sum(p[1] for p in parts)

    def panel(lo, hi):
        # Gauss-Legendre in u on [arctan(lo/g), arctan(hi/g)], w = g tan(u)
        a, b = np.arctan(lo / g)[:, None], np.arctan(hi / g)[:, None]
        half = 0.5 * (b - a)
        t = np.tan(a + half * (xg + 1))
        w = g[:, None] * t
        dens = voigt_profile(w, s[:, None], scale) * (2 * half * wg * g[:, None] * (1 + t * t))
        cc = np.broadcast_to(ceff[:, None], w.shape)
        y = prox(loss, cc, w)
        return np.sum(dens / (1.0 + cc * psi_prime(loss, y)), axis=1), np.sum(dens * psi(loss, y) ** 2, axis=1)

    zero, inf = np.zeros(lam.size), np.full(lam.size, np.inf)
    if loss.kind == "smoothed_huber":
        a1, a2 = _smoothed_huber_breaks(loss, ceff)
        # psi is constant past a2, so the tail needs no grading
        for lo, hi, split in ((zero, a1, True), (a2, inf, False)):
            e1, e2 = mapped(lo, hi, split)
            E1 += e1
            E2 += e2
        # blend branch in the y = prox(w) variable
        yg, yw = _panel_rule(loss.delta - loss.eta, loss.delta, 1, 16 * 2 ** level)
        py = psi(loss, yg)
        jac = 1.0 + ceff[:, None] * psi_prime(loss, yg)
        w = yg + ceff[:, None] * py
        dens = 2 * voigt_profile(w, s[:, None], scale) * yw
        E1 += dens.sum(axis=1)
        E2 += (dens * jac) @ (py * py)
    else:
        # smooth integrand whose transition sits near delta (1 + ceff)
        knots = [zero] + [loss.delta * (1 + ceff) * f for f in (0.25, 0.5, 1.0, 2.0, 4.0)] + [inf]
        for lo, hi in zip(knots[:-1], knots[1:]):
            e1, e2 = mapped(lo, hi, np.all(np.isfinite(hi)))
            E1 += e1
            E2 += e2
    return E1, c * c * lam2 * E2


def _check_spec(spec):
    if not spec.loss.bounded and not spec.allow_unbounded:
        raise ParameterError(
            f"{spec.loss.kind} has unbounded psi; set allow_unbounded=True to use it as a test oracle"
        )


def moments(spec, c, r, level=0):
    """Return (E1, E2) at (c, r): the mixture-averaged prox derivative and
    the psi^2 form of the second equation's expectation."""
    if c < 0 or r < 0:
        raise InputError("c and r must be nonnegative")
    loss = spec.loss
    E1 = E2 = 0.0
    for comp in spec.components:
        lam_x, lam_w = comp.lam.rule(level)
        if comp.eps.kind == "cauchy":
            e1, e2 = _cauchy_conditional(loss, c, lam_x, comp.eps.scale, r, level)
            E1 += comp.weight * float(lam_w @ e1)
            E2 += comp.weight * float(lam_w @ e2)
            continue
        for lam, wl in zip(lam_x, lam_w):
            lam2 = lam * lam
            ceff = c * lam2
            s = r * abs(lam)
            if comp.eps.kind == "gaussian":
                m = np.zeros(1)
                we = np.ones(1)
                s = np.hypot(comp.eps.sigma, s)
            else:
                breaks = ()
                if loss.kind == "smoothed_huber":
                    a1, a2 = _smoothed_huber_breaks(loss, ceff)
                    breaks = _graded((-a2, -a1, a1, a2), s)
                m, we = comp.eps.rule(level, breaks)
            e1, e2 = _conditional(loss, c, ceff, lam2, m, s, level)
            E1 += comp.weight * wl * float(we @ e1)
            E2 += comp.weight * wl * float(we @ e2)
    return E1, E2


def _graded(points, s):
    """Break points plus a graded cluster b +- s 2^k resolving width-s layers."""
    if s == 0:
        return tuple(points)
    off = s * 2.0 ** np.arange(-2, 4)
    return tuple(points) + tuple(np.concatenate([[b - off, b + off] for b in points]).ravel())


def expectation_E1(spec, c, r, level=0):
    return moments(spec, c, r, level)[0]


def expectation_E2(spec, c, r, level=0):
    return moments(spec, c, r, level)[1]


def _w_density(eps, s, w):
    """Density of W = eps + s Z at w (s may be zero unless eps is a point mass)."""
    if eps.kind == "gaussian":
        v = np.hypot(eps.sigma, s)
        return np.exp(-0.5 * (w / v) ** 2) / (v * _SQRT2PI)
    if eps.kind == "point_mass":
        return np.exp(-0.5 * ((w - eps.value) / s) ** 2) / (s * _SQRT2PI)
    if eps.kind == "cauchy":
        return voigt_profile(w, s, eps.scale)
    width = eps.hi - eps.lo
    if s == 0:
        return ((w >= eps.lo) & (w <= eps.hi)) / width
    return (ndtr((w - eps.lo) / s) - ndtr((w - eps.hi) / s)) / width


def expectation_E2_direct(spec, c, r, level=0):
    """E[(W - prox(c lam^2 rho)(W))^2 / lam^2] without the psi^2 rewrite.

    Only defined when every lam law is bounded away from zero.  For each lam
    node the integrand is averaged against the density of W over the whole
    line, mapped by w = centre + g tan(u) and split at the kinks.
    """
    loss = spec.loss
    xg, wg = _legendre(64 * 2 ** level)
    total = 0.0
    for comp in spec.components:
        if comp.lam.contains_zero:
            raise InputError("direct form needs lam bounded away from zero")
        eps = comp.eps
        lam_x, lam_w = comp.lam.rule(level)
        for lam, wl in zip(lam_x, lam_w):
            lam2 = lam * lam
            ceff = c * lam2
            s = r * abs(lam)
            if eps.kind == "point_mass" and s == 0:
                w = np.array([eps.value])
                total += comp.weight * wl * float((w - prox(loss, ceff, w))[0] ** 2) / lam2
                continue
            centre = {"point_mass": eps.value, "uniform": 0.5 * (eps.lo + eps.hi)}.get(eps.kind, 0.0)
            g = s + {"gaussian": eps.sigma, "cauchy": eps.scale, "uniform": 0.5 * (eps.hi - eps.lo)}.get(eps.kind, 0.0)
            kinks = [loss.delta]
            if loss.kind == "smoothed_huber":
                kinks = list(_smoothed_huber_breaks(loss, ceff))
            breaks = [-k for k in kinks] + kinks
            if eps.kind == "uniform":
                breaks += list(_graded((eps.lo, eps.hi), s))
            edges = np.unique(np.concatenate([[-np.pi / 2, np.pi / 2], np.arctan((np.array(breaks) - centre) / g)]))
            acc = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                half = 0.5 * (b - a)
                u = a + half * (xg + 1)
                t = np.tan(u)
                w = centre + g * t
                jac = half * wg * g * (1 + t * t)
                acc += float(jac @ (_w_density(eps, s, w) * (w - prox(loss, ceff, w)) ** 2))
            total += comp.weight * wl * acc / lam2
    return total


class _System:
    """Residuals of the two equations with caching of the inner c solve."""

    def __init__(self, spec, level):
        self.spec = spec
        self.level = level
        self.evals = 0
        self._c_hint = None

    def moments(self, c, r):
        self.evals += 1
        return moments(self.spec, c, r, self.level)

    def eq1(self, c, r):
        return self.moments(c, r)[0] - (1 - self.spec.kappa + self.spec.tau * c)

    def residuals(self, c, r):
        sp = self.spec
        E1, E2 = self.moments(c, r)
        res1 = E1 - (1 - sp.kappa + sp.tau * c)
        res2 = sp.kappa * E2 + (sp.tau * sp.discrepancy * c) ** 2 - (sp.kappa * r) ** 2
        return res1, res2, E2

    def c_of_r(self, r):
        """Root of the first equation in c on [0, kappa/tau] for fixed r."""
        hi = self.spec.c_max
        f = lambda c: self.eq1(c, r)
        lo_c, hi_c = 0.0, hi
        f_lo, f_hi = self.spec.kappa, None
        hint = self._c_hint
        if hint is not None and 0 < hint < hi:
            # narrow the bracket around the previous root when possible
            step = 1e-3 * max(hint, 1e-6)
            a, b = max(0.0, hint - step), min(hi, hint + step)
            fa, fb = f(a), f(b)
            if fa >= 0 >= fb:
                lo_c, hi_c, f_lo, f_hi = a, b, fa, fb
            elif fa < 0:
                hi_c, f_hi = a, fa
            else:
                lo_c, f_lo = b, fb
        if f_hi is None:
            f_hi = f(hi_c)
        if f_hi > 0 or f_lo < 0:
            raise ModelError(
                f"first equation has no sign change on [{lo_c:g}, {hi_c:g}]: values {f_lo:.3e}, {f_hi:.3e} (r={r:g})"
            )
        if f_hi == 0:
            c = hi_c
        else:
            c = brentq(f, lo_c, hi_c, xtol=1e-15, rtol=1e-15, maxiter=200)
        self._c_hint = c
        return c

    def r_candidate(self, r):
        sp = self.spec
        c = self.c_of_r(r)
        _, E2 = self.moments(c, r)
        return c, np.sqrt(max(0.0, sp.kappa * E2 + (sp.tau * sp.discrepancy * c) ** 2)) / sp.kappa

    def h(self, r):
        c, cand = self.r_candidate(r)
        return (self.spec.kappa * cand) ** 2 - (self.spec.kappa * r) ** 2


def initial_r(spec):
    spread = sum(comp.weight * comp.eps.spread for comp in spec.components)
    return float(np.sqrt(spec.kappa) * spread + spec.discrepancy)


def _solve_bracket(system, r0):
    h = system.h
    h0 = h(0.0)
    if h0 <= 0:
        return 0.0
    r0 = r0 if r0 and r0 > 0 else 1.0
    step = 1e-3 * r0
    h_r0 = h(r0)
    if h_r0 > 0:
        lo, hi = r0, r0 + step
        while h(hi) > 0:
            lo, step = hi, 4 * step
            hi = hi + step
            if hi > 1e8:
                raise ModelError("second equation has no root below r = 1e8")
    else:
        lo, hi = max(0.0, r0 - step), r0
        while lo > 0 and h(lo) < 0:
            hi, step = lo, 4 * step
            lo = max(0.0, lo - step)
    return brentq(h, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)


def _solve_damped(system, r0, gamma=0.5, max_outer=200):
    """Damped fixed-point iteration on r with c from the first equation; switches to
    a two-dimensional Newton iteration with a finite-difference Jacobian
    if the damped loop stalls."""
    sp = system.spec
    r = r0
    for it in range(max_outer):
        c, cand = system.r_candidate(r)
        res1, res2, _ = system.residuals(c, r)
        if max(abs(res1), abs(res2)) <= 0.1 * RESIDUAL_TOL:
            return r, it
        r = (1 - gamma) * r + gamma * cand
    x = np.array([system.c_of_r(r), r])
    for it in range(50):
        F = np.array(system.residuals(*x)[:2])
        if np.max(np.abs(F)) <= 0.1 * RESIDUAL_TOL:
            return x[1], max_outer + it
        J = np.empty((2, 2))
        for j in range(2):
            hstep = 1e-6 * max(1.0, abs(x[j]))
            xp = x.copy()
            xp[j] += hstep
            J[:, j] = (np.array(system.residuals(*xp)[:2]) - F) / hstep
        x = x - 0.5 * np.linalg.solve(J, F) if it < 2 else x - np.linalg.solve(J, F)
        x = np.clip(x, [0.0, 0.0], [sp.c_max, np.inf])
    raise ConvergenceError("risk fixed point did not converge", best=x)


def _solve_at_level(spec, level, r0, method):
    system = _System(spec, level)
    if method == "bracket":
        r = _solve_bracket(system, r0)
    elif method == "damped":
        r, _ = _solve_damped(system, r0)
    else:
        raise InputError(f"unknown method {method!r}")
    c = system.c_of_r(r)
    res1, res2, _ = system.residuals(c, r)
    return RiskSolution(float(r), float(c), float(res1), float(res2), system.evals,
                        discrepancy=spec.discrepancy, level=level)


def solve_risk_system(spec, r0=None, method="bracket", level=0, multistart=False):
    """Solve the coupled equations for (r, c).

    The default nests a bracketed root find for c (the first equation is monotone
    in c on [0, kappa/tau]) inside a bracketed root find for r.
    ``method="damped"`` instead iterates r <- (r + r_candidate)/2.  After
    solving, the quadrature is refined once; if E1 or E2 move by more than
    1e-9 the solve is repeated at the finer level.
    ``multistart`` re-solves from five starting radii with the damped scheme
    and records them in ``starts`` as a uniqueness diagnostic.
    """
    _check_spec(spec)
    if r0 is None:
        r0 = initial_r(spec)
    while True:
        sol = _solve_at_level(spec, level, r0, method)
        fine = moments(spec, sol.c, sol.r, level + 1)
        coarse = moments(spec, sol.c, sol.r, level)
        if max(abs(fine[0] - coarse[0]), abs(fine[1] - coarse[1])) < REFINE_TOL:
            break
        level += 1
        r0 = sol.r
        if level > MAX_LEVEL:
            raise AccuracyError(f"quadrature did not settle by level {MAX_LEVEL}")
    if max(abs(sol.residual1), abs(sol.residual2)) > RESIDUAL_TOL:
        raise ConvergenceError(
            f"residuals {sol.residual1:.2e}, {sol.residual2:.2e} exceed {RESIDUAL_TOL:g}", best=sol
        )
    if multistart:
        base = initial_r(spec)
        for f in (0.25, 0.5, 1.0, 2.0, 4.0):
            s = _solve_at_level(spec, sol.level, f * base, "damped")
            sol.starts.append((f * base, s.r, s.c))
    return sol


def source_risk(spec, r0=None, **kw):
    """Source-stage limit: ``spec`` carries (kappa1, tau1, ||w0||) and the
    source error/scale laws.  Same system as the target stage."""
    return solve_risk_system(spec, r0=r0, **kw)


@dataclass
class CurvePoint:
    index: int
    discrepancy: float
    solution: Optional[RiskSolution] = None
    error: Optional[str] = None


def risk_curve(spec, d_grid, method="bracket"):
    """Solve along an ascending grid of D, warm-starting each point from the
    previous solution.  Failures are recorded per point."""
    d_grid = [float(d) for d in d_grid]
    if any(b < a for a, b in zip(d_grid[:-1], d_grid[1:])):
        raise InputError("d_grid must be sorted ascending")
    out = []
    r0 = None
    for i, d in enumerate(d_grid):
        try:
            sol = solve_risk_system(spec.with_discrepancy(d), r0=r0, method=method)
            r0 = sol.r
            out.append(CurvePoint(i, d, sol))
        except (ConvergenceError, ModelError, AccuracyError) as exc:
            out.append(CurvePoint(i, d, error=f"{type(exc).__name__}: {exc}"))
    return out
