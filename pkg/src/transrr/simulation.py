"""Synthetic designs and replicated experiments.

Rows are x_i = lam_i * X_i with X_i standard normal.  The three error
scenarios:

    I    lam = 1,               eps ~ N(0, 1),        source eps ~ N(0, 4)
    II   lam ~ Unif(0, sqrt 3), eps ~ Cauchy(0, 1),   source eps ~ Cauchy(0, 2)
    III  first ceil(n/2) rows as in I, the rest as in II (same for the source)

Every random quantity is drawn from its own stream, keyed by
(replicate, role) under the root seed, so a replicate's data do not depend
on which other replicates run or in what order.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import ConvergenceError, InputError, NumericalError, RunError, TransRRError
from .estimator import (
    TAU_GRID,
    Dataset,
    EstimatorConfig,
    cross_validate_tau,
    fit_robust_ridge,
    trans_rr,
)
from .loss import LossModel
from .risk import MixtureComponent, PopulationSpec, ScalarDist, risk_curve, solve_risk_system

CASES = ("I", "II", "III")
METHODS = ("single", "trans", "pooled")
CROSSOVER_GRID = (-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0)
MAX_FAIL_FRACTION = 0.05

# stream keys
_COEF, _DATA = 0, 1
_ROLES = {"target_X": 0, "target_eps": 1, "target_lam": 2,
          "source_X": 3, "source_eps": 4, "source_lam": 5,
          "cv_single": 6, "cv_source": 7, "cv_target": 8, "cv_pooled": 9}


def _rng(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _stream_seed(seed, *key):
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class CaseSpec:
    case: str
    n: int
    p: int
    n1: int
    seed: int = 0

    def __post_init__(self):
        if self.case not in CASES:
            raise InputError(f"unknown case {self.case!r}; expected one of {CASES}")
        for name in ("n", "p", "n1"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be a positive integer")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InputError("seed must fit in an unsigned 64-bit integer")

    @property
    def kappa(self):
        return self.p / self.n

    @property
    def kappa1(self):
        return self.p / self.n1


@dataclass(frozen=True)
class CoefficientDesign:
    """Frozen target and source coefficients.

    Use :meth:`diffuse` (beta0 = beta*/sqrt(n), w0 = w*/sqrt(n)) or
    :meth:`crossover` (unit-norm beta0, w0 = beta0 - exp(c_d) 1/sqrt(p)).
    """

    mode: str
    beta0: np.ndarray
    w0: np.ndarray
    c_d: Optional[float] = None

    @classmethod
    def diffuse(cls, spec):
        beta = _rng(spec.seed, _COEF, 0).uniform(size=spec.p)
        w = _rng(spec.seed, _COEF, 1).uniform(size=spec.p)
        s = np.sqrt(spec.n)
        return cls("diffuse_table1", beta / s, w / s)

    @classmethod
    def crossover(cls, spec, c_d):
        beta = _rng(spec.seed, _COEF, 0).uniform(size=spec.p)
        beta0 = beta / np.linalg.norm(beta)
        delta0 = np.full(spec.p, np.exp(c_d) / np.sqrt(spec.p))
        return cls("crossover", beta0, beta0 - delta0, float(c_d))

    @property
    def h(self):
        return float(np.linalg.norm(self.beta0 - self.w0))


@dataclass
class Latent:
    """Design rows and errors of one replicate before coefficients enter."""

    X: np.ndarray
    eps: np.ndarray
    X1: np.ndarray
    eps1: np.ndarray


def _case_rows(case, n):
    """Number of Case-I rows among n."""
    return {"I": n, "II": 0, "III": (n + 1) // 2}[case]


def _draw(spec, rep, n, prefix, eps_sd, cauchy_scale):
    p = spec.p
    X = _rng(spec.seed, _DATA, rep, _ROLES[prefix + "_X"]).standard_normal((n, p))
    u = _rng(spec.seed, _DATA, rep, _ROLES[prefix + "_eps"]).uniform(size=n)
    lam_u = _rng(spec.seed, _DATA, rep, _ROLES[prefix + "_lam"]).uniform(size=n)
    k = _case_rows(spec.case, n)
    eps = np.empty(n)
    lam = np.ones(n)
    # Gaussian block by inverse CDF keeps one uniform stream per role
    eps[:k] = eps_sd * ndtri(u[:k])
    eps[k:] = cauchy_scale * np.tan(np.pi * (u[k:] - 0.5))
    lam[k:] = np.sqrt(3.0) * lam_u[k:]
    return X * lam[:, None], eps


def draw_latent(spec, rep):
    X, eps = _draw(spec, rep, spec.n, "target", 1.0, 1.0)
    X1, eps1 = _draw(spec, rep, spec.n1, "source", 2.0, 2.0)
    return Latent(X, eps, X1, eps1)


def generate_case(spec, design, rep=0):
    """Return (source, target) datasets for replicate ``rep``."""
    if design.beta0.shape != (spec.p,) or design.w0.shape != (spec.p,):
        raise InputError("design coefficients do not match p")
    lat = draw_latent(spec, rep)
    target = Dataset(lat.X, lat.X @ design.beta0 + lat.eps)
    source = Dataset(lat.X1, lat.X1 @ design.w0 + lat.eps1)
    return source, target


def population_for_case(case, kappa, tau, discrepancy, loss=None, source=False, n=None):
    """Limit population for a case.  ``n`` (row count) sets the Case-III
    mixture weight exactly; otherwise the halves are equal."""
    loss = loss or LossModel()
    scale = 2.0 if source else 1.0
    one = MixtureComponent(1.0, ScalarDist.gaussian(scale), ScalarDist.point_mass(1.0))
    two = MixtureComponent(1.0, ScalarDist.cauchy(scale), ScalarDist.uniform(0.0, np.sqrt(3.0)))
    if case == "I":
        comps = (one,)
    elif case == "II":
        comps = (two,)
    elif case == "III":
        w = _case_rows("III", n) / n if n else 0.5
        comps = (MixtureComponent(w, one.eps, one.lam), MixtureComponent(1.0 - w, two.eps, two.lam))
    else:
        raise InputError(f"unknown case {case!r}")
    return PopulationSpec(kappa, tau, discrepancy, comps, loss)


@dataclass
class ReplicateResult:
    rep_index: int
    sq_error: dict = field(default_factory=dict)
    rel_error: dict = field(default_factory=dict)
    realized_discrepancy: float = float("nan")
    theory_r2: float = float("nan")
    c_d: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_failures(results, what):
    bad = [r for r in results if not r.ok]
    if len(bad) > MAX_FAIL_FRACTION * len(results):
        raise RunError(f"{len(bad)} of {len(results)} {what} replicates failed; first: {bad[0].error}")
    return bad


@dataclass
class ValidationSummary:
    mean_sq: float
    sd_sq: float
    theory_r2: float
    replicates: list
    failures: int = 0


def run_validation(spec, design, loss=None, tau=1.0, tau1=1.0, reps=200, threads=1, cfg=None):
    """Replicated Trans-RR fits at fixed (tau1, tau) against the conditional
    theory.  Each replicate's theory uses its own realized ||beta0 - w_hat||;
    the theory column is the average over successful replicates."""
    if reps < 2:
        raise InputError("reps must be at least 2")
    loss = loss or LossModel()
    b2 = float(design.beta0 @ design.beta0)

    def one(rep):
        try:
            source, target = generate_case(spec, design, rep)
            fit = trans_rr(source, target, loss, loss, tau1, tau, cfg)
        except (ConvergenceError, NumericalError) as exc:
            return ReplicateResult(rep, error=f"{type(exc).__name__}: {exc}")
        e = fit.coef - design.beta0
        sq = float(e @ e)
        d = float(np.linalg.norm(design.beta0 - fit.stages["source"].coef))
        return ReplicateResult(rep, {"trans": sq}, {"trans": sq / b2}, d)

    results = _map(one, range(reps), threads)
    # theory runs in replicate order so warm starts never depend on scheduling
    r0 = None
    for res in results:
        if not res.ok:
            continue
        pop = population_for_case(spec.case, spec.kappa, tau, res.realized_discrepancy, loss, n=spec.n)
        try:
            sol = solve_risk_system(pop, r0=r0)
        except TransRRError as exc:
            res.error = f"theory: {type(exc).__name__}: {exc}"
            continue
        r0 = sol.r
        res.theory_r2 = sol.r2
    bad = _check_failures(results, "validation")
    good = [r for r in results if r.ok]
    sq = np.array([r.sq_error["trans"] for r in good])
    return ValidationSummary(
        float(sq.mean()),
        float(sq.std(ddof=1)) if sq.size > 1 else float("nan"),
        float(np.mean([r.theory_r2 for r in good])),
        results,
        len(bad),
    )


def _cv_fit(data, loss, grid, folds, seed, cfg, offset=None):
    tau, _ = cross_validate_tau(data, loss, grid, folds, seed, offset=offset, cfg=cfg)
    base = cfg or EstimatorConfig()
    return fit_robust_ridge(data, loss, EstimatorConfig(tau, base.grad_tol, base.max_iter), offset=offset)


@dataclass
class CrossoverSummary:
    rows: list          # (c_d, h, method, median_rel, q1, q3)
    replicates: list    # ReplicateResult with c_d set
    failures: int = 0


def run_crossover(spec, c_d_grid=CROSSOVER_GRID, loss=None, tau_grid=TAU_GRID, reps=100,
                  threads=1, folds=5, cfg=None):
    """Single-RR, Trans-RR and Pooled-RR with 5-fold CV-selected ridge levels
    across the transfer strengths exp(c_d).

    beta0 is the same at every c_d and replicate r uses the same latent
    draws at every c_d, so the comparison across c_d is paired and the
    Single-RR fit (which never sees the source) is computed once per
    replicate.
    """
    c_d_grid = [float(c) for c in c_d_grid]
    if not c_d_grid or len(tau_grid) == 0:
        raise InputError("c_d grid and tau grid must be nonempty")
    loss = loss or LossModel()
    designs = [CoefficientDesign.crossover(spec, c) for c in c_d_grid]
    beta0 = designs[0].beta0
    b2 = float(beta0 @ beta0)

    def one(rep):
        out = []
        try:
            lat = draw_latent(spec, rep)
            target = Dataset(lat.X, lat.X @ beta0 + lat.eps)
            single = _cv_fit(target, loss, tau_grid, folds, _stream_seed(spec.seed, _DATA, rep, _ROLES["cv_single"]), cfg)
            e_single = float(np.sum((single.coef - beta0) ** 2))
        except (ConvergenceError, NumericalError) as exc:
            msg = f"{type(exc).__name__}: {exc}"
            return [ReplicateResult(rep, c_d=c, error=msg) for c in c_d_grid]
        for c, des in zip(c_d_grid, designs):
            try:
                source = Dataset(lat.X1, lat.X1 @ des.w0 + lat.eps1)
                w = _cv_fit(source, loss, tau_grid, folds, _stream_seed(spec.seed, _DATA, rep, _ROLES["cv_source"]), cfg)
                d = _cv_fit(target, loss, tau_grid, folds, _stream_seed(spec.seed, _DATA, rep, _ROLES["cv_target"]),
                            cfg, offset=w.coef)
                pooled = _cv_fit(Dataset.stack(source, target), loss, tau_grid, folds,
                                 _stream_seed(spec.seed, _DATA, rep, _ROLES["cv_pooled"]), cfg)
            except (ConvergenceError, NumericalError) as exc:
                out.append(ReplicateResult(rep, c_d=c, error=f"{type(exc).__name__}: {exc}"))
                continue
            sq = {"single": e_single,
                  "trans": float(np.sum((w.coef + d.coef - beta0) ** 2)),
                  "pooled": float(np.sum((pooled.coef - beta0) ** 2))}
            out.append(ReplicateResult(rep, sq, {k: v / b2 for k, v in sq.items()},
                                       float(np.linalg.norm(beta0 - w.coef)), c_d=c))
        return out

    results = [r for batch in _map(one, range(reps), threads) for r in batch]
    bad = _check_failures(results, "crossover")
    rows = []
    for c, des in zip(c_d_grid, designs):
        good = [r for r in results if r.ok and r.c_d == c]
        for m in METHODS:
            v = np.array([r.rel_error[m] for r in good])
            q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
            rows.append((c, des.h, m, float(med), float(q1), float(q3)))
    return CrossoverSummary(rows, results, len(bad))


@dataclass
class CurveRow:
    case: str
    tau: float
    kappa: float
    discrepancy: float
    r: float = float("nan")
    c: float = float("nan")
    residual1: float = float("nan")
    residual2: float = float("nan")
    iterations: int = 0
    error: Optional[str] = None


def run_curves(populations, tau_list, d_grid):
    """``populations`` maps a case label to a PopulationSpec; returns one
    long-format row per (case, tau, D)."""
    rows = []
    for case, pop in populations.items():
        for tau in tau_list:
            spec = PopulationSpec(pop.kappa, float(tau), pop.discrepancy, pop.components, pop.loss,
                                  pop.allow_unbounded)
            for pt in risk_curve(spec, d_grid):
                s = pt.solution
                if s is None:
                    rows.append(CurveRow(case, float(tau), spec.kappa, pt.discrepancy, error=pt.error))
                else:
                    rows.append(CurveRow(case, float(tau), spec.kappa, pt.discrepancy, s.r, s.c,
                                         s.residual1, s.residual2, s.iterations))
    return rows
