"""Ridge-regularized robust regression and the Trans-RR composition.

All fits minimise

    F(b) = (1/n) sum_i rho(y_i - x_i'(offset + b)) + (tau/2) ||b||^2

which is smooth and tau-strongly convex, so Newton's method with a
backtracking line search converges from the zero start.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import spotrf, spotrs

from .errors import ConvergenceError, InputError, NumericalError
from .loss import LossModel, psi, psi_prime, rho

# a reused factorization is refreshed once it contracts the gradient by less than this
REUSE_RATIO = 0.1

TAU_GRID = tuple(10.0 ** k for k in np.arange(-4.0, 1.0 + 1e-9, 0.5))


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.y.ndim != 1:
            raise InputError(f"expected X 2-D and y 1-D, got shapes {self.X.shape}, {self.y.shape}")
        if self.X.shape[0] != self.y.shape[0]:
            raise InputError(f"X has {self.X.shape[0]} rows but y has length {self.y.shape[0]}")
        if self.X.shape[1] < 1:
            raise InputError("X needs at least one column")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise InputError("data contain non-finite values")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx])

    @staticmethod
    def stack(*parts):
        return Dataset(np.vstack([d.X for d in parts]), np.concatenate([d.y for d in parts]))


@dataclass(frozen=True)
class EstimatorConfig:
    """``grad_tol=None`` means 1e-8 * max(1, ||grad F(0)||)."""

    tau: float = 1.0
    grad_tol: Optional[float] = None
    max_iter: int = 500

    def __post_init__(self):
        if not self.tau > 0:
            raise InputError(f"tau must be positive, got {self.tau}")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise InputError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.max_iter < 1:
            raise InputError("max_iter must be >= 1")


@dataclass
class FitResult:
    coef: np.ndarray
    grad_norm: float
    iterations: int
    objective: float
    tau: float
    converged: bool = True
    stages: dict = field(default_factory=dict)

    def diagnostics(self):
        out = {
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "objective": self.objective,
            "tau": self.tau,
            "converged": self.converged,
        }
        if self.stages:
            out["stages"] = {k: v.diagnostics() for k, v in self.stages.items()}
        return out


class _Objective:
    def __init__(self, X, y, loss, tau):
        self.X, self.y, self.loss, self.tau = X, y, loss, tau
        self.n = X.shape[0]

    def residual(self, b):
        return self.y - self.X @ b

    def value(self, b, r=None):
        r = self.residual(b) if r is None else r
        return float(np.mean(rho(self.loss, r)) + 0.5 * self.tau * (b @ b))

    def grad(self, b, r=None):
        r = self.residual(b) if r is None else r
        return -(self.X.T @ psi(self.loss, r)) / self.n + self.tau * b

    def hessian(self, r):
        w = psi_prime(self.loss, r)
        active = w > 0
        Xa = self.X[active]
        H = (Xa * w[active, None]).T @ Xa / self.n
        H[np.diag_indices_from(H)] += self.tau
        return H


def _line_search(obj, b, F, g, d, r):
    """Backtracking Armijo on F; near the optimum, where F no longer
    resolves the decrease, a step is accepted if it shrinks the gradient."""
    gd = float(g @ d)
    gn = np.linalg.norm(g)
    t = 1.0
    for _ in range(60):
        bn = b + t * d
        rn = obj.residual(bn)
        Fn = obj.value(bn, rn)
        if Fn <= F + 1e-4 * t * gd:
            return bn, rn, Fn
        if abs(gd) <= 1e-12 * max(1.0, abs(F)):
            gnew = obj.grad(bn, rn)
            if np.linalg.norm(gnew) < gn:
                return bn, rn, Fn
        t *= 0.5
    return None


def _check_offset(offset, p):
    if offset is None:
        return None
    offset = np.asarray(offset, dtype=float)
    if offset.shape != (p,):
        raise InputError(f"offset must have shape ({p},), got {offset.shape}")
    if not np.all(np.isfinite(offset)):
        raise InputError("offset contains non-finite values")
    return offset


def fit_robust_ridge(data, loss, cfg=None, offset=None, init=None):
    """Minimise the ridge-penalised robust objective over b by damped Newton.

    With ``offset`` v the residuals are y - X(v + b); the returned ``coef``
    is b alone.  Falls back to Barzilai-Borwein gradient steps if the Newton
    system cannot be factored reliably.
    """
    cfg = cfg or EstimatorConfig()
    if data.n < 1:
        raise InputError("cannot fit an empty dataset")
    offset = _check_offset(offset, data.p)
    y = data.y if offset is None else data.y - data.X @ offset
    obj = _Objective(data.X, y, loss, cfg.tau)

    zero = np.zeros(data.p)
    g0 = obj.grad(zero)
    tol = cfg.grad_tol if cfg.grad_tol is not None else 1e-8 * max(1.0, np.linalg.norm(g0))

    b = zero if init is None else np.array(init, dtype=float)
    r = obj.residual(b)
    F = obj.value(b, r)
    g = g0 if init is None else obj.grad(b, r)
    prev = None
    for it in range(cfg.max_iter + 1):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return FitResult(b, gn, it, F, cfg.tau)
        if it == cfg.max_iter:
            break
        d = None
        try:
            c_and_lower = sla.cho_factor(obj.hessian(r))
            diag = np.abs(np.diag(c_and_lower[0]))
            if (diag.max() / diag.min()) ** 2 < 1e12:
                d = -sla.cho_solve(c_and_lower, g)
        except (np.linalg.LinAlgError, ValueError):
            d = None
        if d is None or g @ d >= 0:
            d = -_bb_step(prev, b, g, cfg.tau) * g
        step = _line_search(obj, b, F, g, d, r)
        if step is None:
            break
        prev = (b, g)
        b, r, F = step
        g = obj.grad(b, r)
    best = FitResult(b, float(np.linalg.norm(g)), it, F, cfg.tau, converged=False)
    raise ConvergenceError(
        f"robust ridge fit stopped after {it} iterations with grad norm {best.grad_norm:.3e} > {tol:.3e}",
        best=best,
    )


def _bb_step(prev, b, g, tau):
    if prev is None:
        return 1.0 / (1.0 + tau)
    s, yk = b - prev[0], g - prev[1]
    sy = float(s @ yk)
    return float(s @ s) / sy if sy > 0 else 1.0 / (1.0 + tau)


def single_rr(target, loss, tau, cfg=None):
    cfg = replace(cfg or EstimatorConfig(), tau=tau)
    return fit_robust_ridge(target, loss, cfg)


def trans_rr(source, target, loss_source, loss_target, tau1, tau, cfg=None):
    """Source fit w, target correction d with offset w, estimate w + d."""
    if source.p != target.p:
        raise InputError(f"source has p={source.p}, target has p={target.p}")
    cfg = cfg or EstimatorConfig()
    try:
        stage1 = fit_robust_ridge(source, loss_source, replace(cfg, tau=tau1))
    except ConvergenceError as exc:
        raise ConvergenceError(f"source stage: {exc}", best=exc.best, stage="source") from exc
    try:
        stage2 = fit_robust_ridge(target, loss_target, replace(cfg, tau=tau), offset=stage1.coef)
    except ConvergenceError as exc:
        raise ConvergenceError(f"target stage: {exc}", best=exc.best, stage="target") from exc
    return FitResult(
        coef=stage1.coef + stage2.coef,
        grad_norm=stage2.grad_norm,
        iterations=stage1.iterations + stage2.iterations,
        objective=stage2.objective,
        tau=tau,
        stages={"source": stage1, "target": stage2},
    )


def pooled_rr(source, target, loss, tau, cfg=None):
    if source.p != target.p:
        raise InputError(f"source has p={source.p}, target has p={target.p}")
    return single_rr(Dataset.stack(source, target), loss, tau, cfg)


class _RidgePath:
    """Warm-started minimisation of F over a decreasing sequence of tau.

    Keeps the data part of the Hessian up to date incrementally (only rows
    whose weight psi'(r_i) changed are touched), factors it in single
    precision and reuses a factorization while it still contracts the
    gradient quickly.  Gradients are always exact float64, so each solve
    meets the same tolerance as ``fit_robust_ridge``.
    """

    def __init__(self, X, y, loss, grad_tol=None, max_iter=500):
        self.X, self.y, self.loss = X, y, loss
        self.n, self.p = X.shape
        self.max_iter = max_iter
        g0 = -(X.T @ psi(loss, y)) / self.n
        self.tol = grad_tol if grad_tol is not None else 1e-8 * max(1.0, np.linalg.norm(g0))
        self.b = np.zeros(self.p)
        self._H = None
        self._w = None
        self._fac = None
        self._fac_tau = None

    def _update_data_hessian(self, w):
        if self._H is None or np.count_nonzero(w != self._w) > self.n // 2:
            active = w > 0
            Xa = self.X[active]
            self._H = (Xa * w[active, None]).T @ Xa / self.n
        else:
            idx = np.flatnonzero(w != self._w)
            if idx.size:
                Xc = self.X[idx]
                self._H += (Xc * (w[idx] - self._w[idx])[:, None]).T @ Xc / self.n
        self._w = w

    def _factor(self, tau):
        H = self._H.astype(np.float32)
        H[np.diag_indices_from(H)] += np.float32(tau)
        fac, info = spotrf(H, lower=1, overwrite_a=1, clean=0)
        if info != 0:
            raise NumericalError(f"single-precision Cholesky failed (info={info})")
        self._fac = fac
        self._fac_tau = tau

    def _solve(self, v):
        x, info = spotrs(self._fac, v.astype(np.float32), lower=1)
        return x.astype(float)

    def solve(self, tau):
        obj = _Objective(self.X, self.y, self.loss, tau)
        b = self.b
        if self._fac is not None and tau != self._fac_tau:
            # tangent predictor: d b / d tau = -(H + tau I)^{-1} b
            pred = b + (self._fac_tau - tau) * self._solve(b)
            if obj.value(pred) < obj.value(b):
                b = pred
        r = obj.residual(b)
        F = obj.value(b, r)
        fresh = False
        gprev = np.inf
        for it in range(self.max_iter + 1):
            g = obj.grad(b, r)
            gn = float(np.linalg.norm(g))
            if gn <= self.tol:
                self.b = b
                return FitResult(b, gn, it, F, tau)
            if it == self.max_iter:
                break
            if not fresh or gn > REUSE_RATIO * gprev:
                self._update_data_hessian(psi_prime(self.loss, r))
                self._factor(tau)
                fresh = True
            step = _line_search(obj, b, F, g, -self._solve(g), r)
            if step is None:
                fresh = False
                step = _line_search(obj, b, F, g, -_bb_step(None, b, g, tau) * g, r)
                if step is None:
                    break
            b, r, F = step
            gprev = gn
        raise ConvergenceError(
            f"path solve at tau={tau:g} did not converge",
            best=FitResult(b, float(np.linalg.norm(obj.grad(b))), it, F, tau, converged=False),
        )


def fold_indices(n, folds, seed):
    """Seeded permutation cut into contiguous blocks; the first n % folds
    blocks get one extra element."""
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def cross_validate_tau(data, loss, grid=TAU_GRID, folds=5, seed=0, offset=None, cfg=None):
    """Pick tau from ``grid`` by k-fold validation mean absolute error.

    Returns ``(tau, table)`` with ``table[j]`` the fold-averaged MAE of
    ``grid[j]``.  Ties go to the largest tau.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InputError("tau grid is empty")
    if np.any(grid <= 0):
        raise InputError("tau grid values must be positive")
    if folds < 2:
        raise InputError("need at least 2 folds")
    if data.n < folds:
        raise InputError(f"n={data.n} is smaller than the number of folds {folds}")
    cfg = cfg or EstimatorConfig()
    offset = _check_offset(offset, data.p)
    y = data.y if offset is None else data.y - data.X @ offset
    order = np.argsort(-grid, kind="stable")
    mae = np.empty((folds, grid.size))
    for k, val in enumerate(fold_indices(data.n, folds, seed)):
        train = np.ones(data.n, dtype=bool)
        train[val] = False
        path = _RidgePath(data.X[train], y[train], loss, cfg.grad_tol, cfg.max_iter)
        Xv, yv = data.X[val], y[val]
        for j in order:
            b = path.solve(grid[j]).coef
            mae[k, j] = np.mean(np.abs(yv - Xv @ b))
    table = mae.mean(axis=0)
    best = table.min()
    ties = np.flatnonzero(table <= best + 1e-12 * max(1.0, abs(best)))
    return float(grid[ties].max()), table


@dataclass
class WhiteningTransform:
    mean: np.ndarray
    inv_sqrt_cov: np.ndarray
    y_mean: float
    stride: int = 1

    def apply(self, data):
        X = data.X[:, :: self.stride]
        return Dataset((X - self.mean) @ self.inv_sqrt_cov, data.y - self.y_mean)


def whiten(train, apply_to=(), stride=1, allow_jitter=True):
    """Whiten predictors with training-sample moments; centre the response.

    Keeps every ``stride``-th column first.  Eigenvalues of the training
    covariance below 1e-10 times the largest are floored there when
    ``allow_jitter``; otherwise a near-singular covariance is an error.
    """
    if stride < 1:
        raise InputError("stride must be >= 1")
    X = train.X[:, ::stride]
    if train.n < 2:
        raise InputError("need at least two training rows to whiten")
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    vals, vecs = np.linalg.eigh(cov)
    floor = 1e-10 * vals.max()
    if vals.max() <= 0:
        raise NumericalError("training covariance is zero")
    if vals.min() <= floor:
        if not allow_jitter:
            raise NumericalError(f"training covariance is singular (min eigenvalue {vals.min():.3e})")
        vals = np.maximum(vals, floor)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    tr = WhiteningTransform(mean, inv_sqrt, float(train.y.mean()), stride)
    return tr.apply(train), [tr.apply(d) for d in apply_to], tr
