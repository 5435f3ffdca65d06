import numpy as np
import pytest

from transrr.errors import InputError, RunError
from transrr.estimator import EstimatorConfig, pooled_rr, single_rr, trans_rr
from transrr.loss import LossModel
from transrr.risk import solve_risk_system
from transrr.simulation import (
    CaseSpec,
    CoefficientDesign,
    draw_latent,
    generate_case,
    population_for_case,
    run_crossover,
    run_curves,
    run_validation,
)

SH = LossModel()


def test_case_spec_validation():
    with pytest.raises(InputError):
        CaseSpec("IV", 10, 10, 20)
    with pytest.raises(InputError):
        CaseSpec("I", 0, 10, 20)
    with pytest.raises(InputError):
        CaseSpec("I", 10, 10, 20, seed=-1)
    assert CaseSpec("I", 50, 200, 100).kappa == 4.0


def test_case_I_lambda_is_one():
    spec = CaseSpec("I", 30, 5, 60, seed=1)
    lat = draw_latent(spec, 0)
    raw = np.random.Generator(np.random.PCG64(np.random.SeedSequence(1, spawn_key=(1, 0, 0)))).standard_normal((30, 5))
    np.testing.assert_array_equal(lat.X, raw)


def test_case_II_lambda_second_moment():
    spec = CaseSpec("II", 1_000_000, 1, 1, seed=5)
    lat = draw_latent(spec, 0)
    # rows are lam * X with X standard normal; recover lam^2 from the stream
    lam_u = np.random.Generator(np.random.PCG64(np.random.SeedSequence(5, spawn_key=(1, 0, 2)))).uniform(size=10**6)
    lam2 = 3 * lam_u**2
    assert abs(lam2.mean() - 1) < 3 * lam2.std() / 1e3
    assert np.mean(lat.X[:, 0] ** 2) == pytest.approx(1, abs=0.01)


def test_case_III_blocks():
    spec = CaseSpec("III", 7, 3, 9, seed=2)
    lat = draw_latent(spec, 0)
    raw = np.random.Generator(np.random.PCG64(np.random.SeedSequence(2, spawn_key=(1, 0, 0)))).standard_normal((7, 3))
    # first ceil(7/2) = 4 rows are Case I (lambda = 1)
    np.testing.assert_array_equal(lat.X[:4], raw[:4])
    assert not np.array_equal(lat.X[4:], raw[4:])
    pop = population_for_case("III", 1.0, 1.0, 0.0, n=7)
    assert pop.components[0].weight == pytest.approx(4 / 7)


def test_seed_determinism_and_independence():
    spec = CaseSpec("II", 20, 4, 40, seed=11)
    des = CoefficientDesign.diffuse(spec)
    a = generate_case(spec, des, 3)
    b = generate_case(spec, des, 3)
    c = generate_case(spec, des, 4)
    for x, y in zip(a, b):
        assert np.array_equal(x.X, y.X) and np.array_equal(x.y, y.y)
    assert not np.array_equal(a[1].X, c[1].X)


def test_designs():
    spec = CaseSpec("I", 100, 100, 200, seed=3)
    d = CoefficientDesign.diffuse(spec)
    assert np.all((d.beta0 >= 0) & (d.beta0 <= 0.1))
    for cd in (-2.0, 0.0, 1.0):
        x = CoefficientDesign.crossover(spec, cd)
        assert np.linalg.norm(x.beta0) == pytest.approx(1, abs=1e-15)
        assert x.h == pytest.approx(np.exp(cd), abs=1e-12)
    np.testing.assert_array_equal(CoefficientDesign.crossover(spec, -2).beta0,
                                  CoefficientDesign.crossover(spec, 1).beta0)


def test_responses():
    spec = CaseSpec("I", 15, 4, 30, seed=4)
    des = CoefficientDesign.diffuse(spec)
    src, tgt = generate_case(spec, des, 0)
    lat = draw_latent(spec, 0)
    np.testing.assert_array_equal(tgt.y, lat.X @ des.beta0 + lat.eps)
    np.testing.assert_array_equal(src.y, lat.X1 @ des.w0 + lat.eps1)
    assert np.std(lat.eps1) > np.std(lat.eps)


def test_validation_two_reps_sd():
    spec = CaseSpec("I", 40, 20, 80, seed=6)
    s = run_validation(spec, CoefficientDesign.diffuse(spec), SH, reps=2)
    a, b = (r.sq_error["trans"] for r in s.replicates)
    assert s.sd_sq == pytest.approx(abs(a - b) / np.sqrt(2), rel=1e-12)
    with pytest.raises(InputError):
        run_validation(spec, CoefficientDesign.diffuse(spec), SH, reps=1)


def test_validation_theory_uses_realized_discrepancy():
    spec = CaseSpec("III", 40, 20, 80, seed=7)
    s = run_validation(spec, CoefficientDesign.diffuse(spec), SH, reps=3)
    for r in s.replicates:
        pop = population_for_case("III", 0.5, 1.0, r.realized_discrepancy, SH, n=40)
        assert r.theory_r2 == pytest.approx(solve_risk_system(pop).r2, rel=1e-10)


def test_validation_thread_independent():
    spec = CaseSpec("II", 40, 20, 80, seed=8)
    des = CoefficientDesign.diffuse(spec)
    a = run_validation(spec, des, SH, reps=6, threads=1)
    b = run_validation(spec, des, SH, reps=6, threads=4)
    assert [(r.sq_error, r.theory_r2) for r in a.replicates] == [(r.sq_error, r.theory_r2) for r in b.replicates]


def test_failures_counted(monkeypatch):
    import transrr.simulation as sim
    from transrr.errors import ConvergenceError

    real = sim.trans_rr
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ConvergenceError("nope")
        return real(*a, **k)

    monkeypatch.setattr(sim, "trans_rr", flaky)
    spec = CaseSpec("I", 30, 10, 60, seed=9)
    with pytest.raises(RunError):
        run_validation(spec, CoefficientDesign.diffuse(spec), SH, reps=10)
    calls["n"] = 0
    s = run_validation(spec, CoefficientDesign.diffuse(spec), SH, reps=40)
    assert s.failures == 1 and len([r for r in s.replicates if r.ok]) == 39


def test_crossover_small():
    spec = CaseSpec("I", 30, 20, 60, seed=10)
    s = run_crossover(spec, [-1.0, 0.5], SH, tau_grid=[0.1, 1.0], reps=3, folds=3)
    assert len(s.rows) == 6
    for r in s.replicates:
        assert r.realized_discrepancy >= 0
    by = {(c, m): (med, q1, q3) for c, _, m, med, q1, q3 in s.rows}
    for v in by.values():
        assert v[1] <= v[0] <= v[2]
    # Single-RR does not depend on the source and so not on c_d
    assert by[(-1.0, "single")] == by[(0.5, "single")]


def test_transfer_helps_when_sources_agree():
    spec = CaseSpec("I", 100, 100, 200, seed=12)
    des = CoefficientDesign("diffuse_table1", np.full(100, 0.1), np.full(100, 0.1))
    err_t, err_s, err_p = [], [], []
    for rep in range(50):
        src, tgt = generate_case(spec, des, rep)
        err_t.append(np.sum((trans_rr(src, tgt, SH, SH, 1.0, 1.0).coef - des.beta0) ** 2))
        err_s.append(np.sum((single_rr(tgt, SH, 1.0).coef - des.beta0) ** 2))
        err_p.append(np.sum((pooled_rr(src, tgt, SH, 1.0).coef - des.beta0) ** 2))
    assert np.mean(err_t) < np.mean(err_s)
    assert np.mean(err_p) <= np.mean(err_s)


def test_single_beats_trans_at_large_h():
    spec = CaseSpec("I", 100, 100, 200, seed=13)
    s = run_crossover(spec, [1.0], SH, reps=50)
    by = {m: med for _, _, m, med, _, _ in s.rows}
    assert by["single"] < by["trans"]


def test_curves():
    pops = {"I": population_for_case("I", 1.0, 1.0, 0.0)}
    rows = run_curves(pops, [1.0], [0.7])
    assert len(rows) == 1
    ref = solve_risk_system(population_for_case("I", 1.0, 1.0, 0.7))
    assert rows[0].r == pytest.approx(ref.r, abs=1e-12)
    rows = run_curves(pops, [0.5, 1.0], [0.0, 0.5, 1.0])
    assert len(rows) == 6 and all(r.error is None and np.isfinite(r.r) for r in rows)
    for tau in (0.5, 1.0):
        rs = [r.r for r in rows if r.tau == tau]
        assert np.all(np.diff(rs) > 0)
