"""Command-line entry point.

    transrr fit      --config fit.json
    transrr risk     --config risk.json
    transrr curve    --config curve.json
    transrr simulate --config sim.json [--threads 8] [--full-scale]
    transrr bench    [--config bench.json]

Each config is one JSON object with a ``command`` key naming the
subcommand.  Unknown keys are rejected.  ``--seed`` overrides the config
seed and every output file records the seed it was produced with.

Exit codes: 0 success, 2 bad input, 3 solver failure.
"""
import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    AccuracyError,
    ConvergenceError,
    InputError,
    ModelError,
    ParameterError,
    RunError,
)
from .estimator import TAU_GRID, Dataset, EstimatorConfig, cross_validate_tau, fit_robust_ridge, pooled_rr, single_rr, trans_rr
from .loss import LossModel
from .risk import MixtureComponent, PopulationSpec, ScalarDist, solve_risk_system
from .simulation import (
    CROSSOVER_GRID,
    CaseSpec,
    CoefficientDesign,
    population_for_case,
    run_crossover,
    run_curves,
    run_validation,
)

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3
FULL_SCALE_REPS = 1000


# ----------------------------------------------------------------------------
# configs

def _loss_from(d):
    if isinstance(d, LossModel):
        return d
    if not isinstance(d, dict):
        raise InputError("loss must be an object")
    extra = set(d) - {"kind", "delta", "eta"}
    if extra:
        raise InputError(f"unknown loss keys: {sorted(extra)}")
    return LossModel(**d)


def _loss_to(loss):
    return {"kind": loss.kind, "delta": loss.delta, "eta": loss.eta}


def _components_from(items):
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or set(item) != {"weight", "eps", "lam"}:
            raise InputError(f"component {i} needs exactly the keys weight, eps, lam")
        out.append(MixtureComponent(float(item["weight"]), ScalarDist.from_dict(item["eps"]),
                                    ScalarDist.from_dict(item["lam"])))
    return out


def _components_to(comps):
    return [{"weight": c.weight, "eps": c.eps.to_dict(), "lam": c.lam.to_dict()} for c in comps]


class _Config:
    """Strict JSON mapping for the dataclass configs below."""

    command = None
    _loss_fields = ("loss",)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InputError("config must be a JSON object")
        d = dict(d)
        cmd = d.pop("command", cls.command)
        if cmd != cls.command:
            raise InputError(f"config command is {cmd!r}, expected {cls.command!r}")
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise InputError(f"unknown config keys for {cls.command}: {sorted(extra)}")
        for k in cls._loss_fields:
            if k in d:
                d[k] = _loss_from(d[k])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(str(exc)) from exc

    def to_dict(self):
        out = {"command": self.command}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = _loss_to(v) if isinstance(v, LossModel) else v
        return out


@dataclass
class FitConfig(_Config):
    """``target`` and ``source`` are CSV paths with header y,x1..xp.
    ``method`` is single-rr, trans-rr or pooled-rr; a null ``tau`` (or
    ``tau1``) selects it by 5-fold CV over the default grid."""

    command = "fit"
    target: str = ""
    source: Optional[str] = None
    method: str = "single-rr"
    loss: LossModel = field(default_factory=LossModel)
    tau: Optional[float] = 1.0
    tau1: Optional[float] = 1.0
    grad_tol: Optional[float] = None
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("single-rr", "trans-rr", "pooled-rr"):
            raise InputError(f"unknown method {self.method!r}")
        if not self.target:
            raise InputError("fit config needs a target CSV path")
        if self.method != "single-rr" and not self.source:
            raise InputError(f"{self.method} needs a source CSV path")


@dataclass
class RiskConfig(_Config):
    """Population is either a named case (I, II, III) or explicit
    ``components``; ``discrepancies`` lists the D values to solve at."""

    command = "risk"
    case: str = "I"
    components: Optional[list] = None
    kappa: float = 1.0
    tau: float = 1.0
    discrepancies: list = field(default_factory=lambda: [0.0])
    source: bool = False
    loss: LossModel = field(default_factory=LossModel)
    allow_unbounded: bool = False
    method: str = "bracket"
    seed: int = 0

    def population(self, tau=None):
        tau = self.tau if tau is None else tau
        if self.components:
            comps = _components_from(self.components)
            return PopulationSpec(self.kappa, tau, 0.0, comps, self.loss, self.allow_unbounded)
        if self.case not in ("I", "II", "III"):
            raise InputError(f"case {self.case!r} needs explicit components")
        pop = population_for_case(self.case, self.kappa, tau, 0.0, self.loss, source=self.source)
        return dataclasses.replace(pop, allow_unbounded=self.allow_unbounded)


@dataclass
class CurveConfig(_Config):
    command = "curve"
    cases: list = field(default_factory=lambda: ["I", "II", "III"])
    components: Optional[list] = None
    kappa: float = 1.0
    tau_list: list = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0, 5.0])
    d_grid: list = field(default_factory=lambda: [round(0.1 * k, 10) for k in range(31)])
    loss: LossModel = field(default_factory=LossModel)
    allow_unbounded: bool = False
    seed: int = 0


@dataclass
class SimulateConfig(_Config):
    """``experiment`` is validation (fixed tau, tau1 against the theory)
    or crossover (CV-tuned Single/Trans/Pooled over c_d_grid)."""

    command = "simulate"
    experiment: str = "validation"
    case: str = "I"
    n: int = 200
    p: int = 200
    n1: int = 400
    reps: int = 200
    seed: int = 0
    tau: float = 1.0
    tau1: float = 1.0
    c_d_grid: list = field(default_factory=lambda: list(CROSSOVER_GRID))
    tau_grid: list = field(default_factory=lambda: list(TAU_GRID))
    folds: int = 5
    loss: LossModel = field(default_factory=LossModel)

    def __post_init__(self):
        if self.experiment not in ("validation", "crossover"):
            raise InputError(f"unknown experiment {self.experiment!r}")


@dataclass
class BenchConfig(_Config):
    command = "bench"
    n: int = 400
    p: int = 400
    seed: int = 0


CONFIGS = {c.command: c for c in (FitConfig, RiskConfig, CurveConfig, SimulateConfig, BenchConfig)}


def load_config(path, command):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from exc
    return CONFIGS[command].from_dict(raw)


# ----------------------------------------------------------------------------
# I/O

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows, seed, comments=()):
    lines = [f"# seed={seed}"] + [f"# {c}" for c in comments] + [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def read_data_csv(path):
    """Read a y,x1..xp CSV into a Dataset; lines starting with # are skipped."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError as exc:
        raise InputError(f"data file not found: {path}") from exc
    with fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    p = len(header) - 1
    if p < 1 or header != ["y"] + [f"x{j}" for j in range(1, p + 1)]:
        raise InputError(f"{path}: header must be y,x1,...,xp; got {','.join(header)}")
    values = np.empty((len(rows) - 1, p + 1))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != p + 1:
            raise InputError(f"{path}: row {i} has {len(row)} fields, expected {p + 1}")
        for j, cell in enumerate(row):
            try:
                values[i - 1, j] = float(cell)
            except ValueError:
                raise InputError(f"{path}: non-numeric cell at row {i}, column {header[j]!r}: {cell!r}") from None
    return Dataset(values[:, 1:], values[:, 0])


# ----------------------------------------------------------------------------
# commands

def _cv_tau(data, loss, seed, offset=None):
    return cross_validate_tau(data, loss, seed=seed, offset=offset)[0]


def cmd_fit(cfg, out):
    target = read_data_csv(cfg.target)
    source = read_data_csv(cfg.source) if cfg.method != "single-rr" else None
    if source is not None and source.p != target.p:
        raise InputError(f"source has p={source.p}, target has p={target.p}")
    base = EstimatorConfig(1.0, cfg.grad_tol, cfg.max_iter)
    status = EXIT_OK
    try:
        if cfg.method == "single-rr":
            tau = cfg.tau if cfg.tau is not None else _cv_tau(target, cfg.loss, cfg.seed)
            res = single_rr(target, cfg.loss, tau, base)
        elif cfg.method == "pooled-rr":
            tau = cfg.tau if cfg.tau is not None else _cv_tau(Dataset.stack(source, target), cfg.loss, cfg.seed)
            res = pooled_rr(source, target, cfg.loss, tau, base)
        else:
            tau1 = cfg.tau1 if cfg.tau1 is not None else _cv_tau(source, cfg.loss, cfg.seed)
            if cfg.tau is None:
                w = fit_robust_ridge(source, cfg.loss, dataclasses.replace(base, tau=tau1)).coef
                tau = _cv_tau(target, cfg.loss, cfg.seed, offset=w)
            else:
                tau = cfg.tau
            res = trans_rr(source, target, cfg.loss, cfg.loss, tau1, tau, base)
    except ConvergenceError as exc:
        if exc.best is None:
            raise
        res = exc.best
        if exc.stage:
            res.stages = {exc.stage: exc.best}
        status = EXIT_SOLVER
        print(f"error: {exc}", file=sys.stderr)
    diag = {"seed": cfg.seed, "method": cfg.method, **res.diagnostics()}
    atomic_write(Path(out) / "coef.csv",
                 csv_text(["index", "coef"], enumerate(res.coef), cfg.seed,
                          () if status == EXIT_OK else ("not converged: best iterate",)))
    atomic_write(Path(out) / "diagnostics.json", json.dumps(diag, indent=2, default=float) + "\n")
    return status


RISK_HEADER = ["case", "tau", "kappa", "discrepancy", "r", "c", "residual1", "residual2", "iterations"]


def _risk_rows(label, pop, discrepancies, method):
    rows, notes = [], []
    r0 = None
    for k, d in enumerate(discrepancies):
        try:
            s = solve_risk_system(pop.with_discrepancy(float(d)), r0=r0, method=method)
            r0 = s.r
            rows.append((label, pop.tau, pop.kappa, float(d), s.r, s.c, s.residual1, s.residual2, s.iterations))
        except (ConvergenceError, ModelError, AccuracyError) as exc:
            rows.append((label, pop.tau, pop.kappa, float(d), math.nan, math.nan, math.nan, math.nan, -1))
            notes.append(f"row {k} failed: {type(exc).__name__}: {exc}")
    return rows, notes


def cmd_risk(cfg, out):
    pop = cfg.population()
    label = "custom" if cfg.components else cfg.case
    rows, notes = _risk_rows(label, pop, cfg.discrepancies, cfg.method)
    atomic_write(Path(out) / "risk.csv", csv_text(RISK_HEADER, rows, cfg.seed, notes))
    for n in notes:
        print(f"error: {n}", file=sys.stderr)
    return EXIT_SOLVER if notes else EXIT_OK


def cmd_curve(cfg, out):
    if cfg.components:
        comps = _components_from(cfg.components)
        pops = {"custom": PopulationSpec(cfg.kappa, 1.0, 0.0, comps, cfg.loss, cfg.allow_unbounded)}
    else:
        for c in cfg.cases:
            if c not in ("I", "II", "III"):
                raise InputError(f"unknown case {c!r}")
        pops = {c: population_for_case(c, cfg.kappa, 1.0, 0.0, cfg.loss) for c in cfg.cases}
    rows, notes = [], []
    for i, row in enumerate(run_curves(pops, cfg.tau_list, cfg.d_grid)):
        if row.error:
            notes.append(f"row {i} failed: {row.error}")
            rows.append((row.case, row.tau, row.kappa, row.discrepancy) + (math.nan,) * 4 + (-1,))
        else:
            rows.append((row.case, row.tau, row.kappa, row.discrepancy, row.r, row.c,
                         row.residual1, row.residual2, row.iterations))
    atomic_write(Path(out) / "curve.csv", csv_text(RISK_HEADER, rows, cfg.seed, notes))
    return EXIT_SOLVER if notes else EXIT_OK


def cmd_simulate(cfg, out, threads=1, full_scale=False):
    reps = FULL_SCALE_REPS if full_scale else cfg.reps
    spec = CaseSpec(cfg.case, cfg.n, cfg.p, cfg.n1, cfg.seed)
    out = Path(out)
    if cfg.experiment == "validation":
        design = CoefficientDesign.diffuse(spec)
        s = run_validation(spec, design, cfg.loss, cfg.tau, cfg.tau1, reps, threads)
        rep_rows = [(r.rep_index, "trans-rr", r.sq_error["trans"], r.rel_error["trans"], r.realized_discrepancy)
                    for r in s.replicates if r.ok]
        summary = csv_text(["method", "mean_sq", "sd_sq", "theory_r2"],
                           [("trans-rr", s.mean_sq, s.sd_sq, s.theory_r2)], cfg.seed,
                           [f"failures={s.failures}"])
        # per-replicate theory kept alongside for inspection
        theory = csv_text(["rep", "realized_discrepancy", "theory_r2"],
                          [(r.rep_index, r.realized_discrepancy, r.theory_r2) for r in s.replicates if r.ok],
                          cfg.seed)
        atomic_write(out / "theory.csv", theory)
        rep_text = csv_text(["rep", "method", "sq_error", "rel_error", "realized_discrepancy"], rep_rows, cfg.seed)
    else:
        s = run_crossover(spec, cfg.c_d_grid, cfg.loss, cfg.tau_grid, reps, threads, cfg.folds)
        names = {"single": "single-rr", "trans": "trans-rr", "pooled": "pooled-rr"}
        rep_rows = [(r.c_d, r.rep_index, names[m], r.sq_error[m], r.rel_error[m], r.realized_discrepancy)
                    for r in s.replicates if r.ok for m in names]
        summary = csv_text(["c_d", "h", "method", "median_rel", "q1", "q3"],
                           [(c, h, names[m], med, q1, q3) for c, h, m, med, q1, q3 in s.rows], cfg.seed,
                           [f"failures={s.failures}"])
        rep_text = csv_text(["c_d", "rep", "method", "sq_error", "rel_error", "realized_discrepancy"],
                            rep_rows, cfg.seed)
    atomic_write(out / "replicates.csv", rep_text)
    atomic_write(out / "summary.csv", summary)
    return EXIT_OK


def cmd_bench(cfg, out):
    from .simulation import generate_case

    spec = CaseSpec("I", cfg.n, cfg.p, 2 * cfg.n, cfg.seed)
    source, target = generate_case(spec, CoefficientDesign.diffuse(spec))
    loss = LossModel()
    timings = []

    def clock(name, fn):
        t = time.perf_counter()
        fn()
        timings.append((name, time.perf_counter() - t))

    clock("single_rr_fit", lambda: single_rr(target, loss, 1.0))
    clock("trans_rr_fit", lambda: trans_rr(source, target, loss, loss, 1.0, 1.0))
    clock("cv_target", lambda: cross_validate_tau(target, loss, seed=cfg.seed))
    clock("risk_case_I", lambda: solve_risk_system(population_for_case("I", 1.0, 1.0, 0.5)))
    clock("risk_case_II", lambda: solve_risk_system(population_for_case("II", 1.0, 1.0, 0.5)))
    atomic_write(Path(out) / "bench.csv", csv_text(["name", "seconds"], timings, cfg.seed))
    for name, sec in timings:
        print(f"{name:16s} {sec:8.3f} s")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="transrr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in CONFIGS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "bench", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
        p.add_argument("--full-scale", action="store_true", help=f"{FULL_SCALE_REPS} replicates")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        raise InputError("--threads must be >= 1")
    cfg = load_config(args.config, args.command) if args.config else CONFIGS[args.command]()
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise InputError("--seed must fit in an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.command == "simulate":
        return cmd_simulate(cfg, args.out, args.threads, args.full_scale)
    return {"fit": cmd_fit, "risk": cmd_risk, "curve": cmd_curve, "bench": cmd_bench}[args.command](cfg, args.out)


def main(argv=None):
    try:
        return run(argv)
    except (InputError, ParameterError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, ModelError, AccuracyError, RunError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
