import json

import numpy as np
import pytest

from transrr.cli import (
    CONFIGS,
    CurveConfig,
    FitConfig,
    RiskConfig,
    SimulateConfig,
    main,
    read_data_csv,
)
from transrr.errors import InputError

GOLD = (np.sqrt(5) - 1) / 2


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def write_data(path, X, y):
    p = X.shape[1]
    lines = ["y," + ",".join(f"x{j + 1}" for j in range(p))]
    lines += [",".join(repr(float(v)) for v in [yi, *xi]) for xi, yi in zip(X, y)]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def read_csv(path):
    lines = path.read_text().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    body = [l.split(",") for l in lines if not l.startswith("#")]
    return comments, body[0], body[1:]


@pytest.mark.parametrize("cls", list(CONFIGS.values()))
def test_config_round_trip(cls):
    cfg = cls.from_dict({"target": "t.csv"}) if cls is FitConfig else cls()
    d = cfg.to_dict()
    again = cls.from_dict(json.loads(json.dumps(d)))
    assert again.to_dict() == d


def test_unknown_keys_rejected():
    with pytest.raises(InputError):
        RiskConfig.from_dict({"command": "risk", "kapa": 1})
    with pytest.raises(InputError):
        RiskConfig.from_dict({"command": "curve"})
    with pytest.raises(InputError):
        SimulateConfig.from_dict({"loss": {"kind": "smoothed_huber", "width": 1}})


def test_fit_quadratic_toy(tmp_path):
    X = np.array([[1.0, 0.5], [-0.3, 2.0], [0.7, -1.1], [1.5, 0.2], [-0.9, -0.4]])
    y = np.array([1.0, -2.0, 0.5, 3.0, -0.7])
    cfg = write_json(tmp_path / "fit.json", {
        "command": "fit", "target": write_data(tmp_path / "t.csv", X, y),
        "loss": {"kind": "quadratic_test"}, "tau": 0.5})
    out = tmp_path / "out"
    assert main(["fit", "--config", cfg, "--out", str(out), "--seed", "42"]) == 0
    comments, header, rows = read_csv(out / "coef.csv")
    assert comments[0] == "# seed=42"
    assert header == ["index", "coef"]
    coef = np.array([float(r[1]) for r in rows])
    ref = np.linalg.solve(X.T @ X / 5 + 0.5 * np.eye(2), X.T @ y / 5)
    np.testing.assert_allclose(coef, ref, atol=1e-8)
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["seed"] == 42 and diag["grad_norm"] <= 1e-8


def test_fit_trans_has_two_stages(tmp_path):
    rng = np.random.default_rng(0)
    Xs, Xt = rng.standard_normal((60, 4)), rng.standard_normal((30, 4))
    b = np.ones(4) / 2
    src = write_data(tmp_path / "s.csv", Xs, Xs @ b + rng.standard_normal(60))
    tgt = write_data(tmp_path / "t.csv", Xt, Xt @ b + rng.standard_normal(30))
    cfg = write_json(tmp_path / "fit.json", {"command": "fit", "method": "trans-rr", "target": tgt,
                                             "source": src, "tau": None, "tau1": None})
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert set(diag["stages"]) == {"source", "target"}


def test_fit_missing_file(tmp_path):
    cfg = write_json(tmp_path / "fit.json", {"command": "fit", "target": str(tmp_path / "nope.csv")})
    out = tmp_path / "out"
    assert main(["fit", "--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()
    assert main(["fit", "--config", str(tmp_path / "missing.json"), "--out", str(out)]) == 2


def test_fit_convergence_failure_writes_best(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 10))
    tgt = write_data(tmp_path / "t.csv", X, rng.standard_cauchy(40))
    cfg = write_json(tmp_path / "fit.json", {"command": "fit", "target": tgt, "tau": 1e-3,
                                             "max_iter": 1, "grad_tol": 1e-300})
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert diag["converged"] is False


def test_read_data_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y,x1,x2\n1,2,3\n4,oops,6\n")
    with pytest.raises(InputError, match=r"row 2, column 'x1'"):
        read_data_csv(p)
    p.write_text("y,a,b\n1,2,3\n")
    with pytest.raises(InputError, match="header"):
        read_data_csv(p)
    p.write_text("y,x1\n1,2\n3\n")
    with pytest.raises(InputError, match="row 2"):
        read_data_csv(p)


def test_risk_golden_row(tmp_path):
    cfg = write_json(tmp_path / "r.json", {
        "command": "risk", "kappa": 1, "tau": 1, "discrepancies": [0.0, 1.0],
        "components": [{"weight": 1, "eps": {"kind": "gaussian", "sigma": 1}, "lam": {"kind": "point_mass", "value": 1}}],
        "loss": {"kind": "quadratic_test"}, "allow_unbounded": True})
    assert main(["risk", "--config", cfg, "--out", str(tmp_path)]) == 0
    comments, header, rows = read_csv(tmp_path / "risk.csv")
    assert header == ["case", "tau", "kappa", "discrepancy", "r", "c", "residual1", "residual2", "iterations"]
    r, c = float(rows[0][4]), float(rows[0][5])
    assert c == pytest.approx(0.618034, abs=1e-6) and r * r == pytest.approx(0.170820, abs=1e-6)
    assert float(rows[1][4]) ** 2 == pytest.approx(0.618034, abs=1e-6)
    assert all(abs(float(x[6])) <= 1e-8 and abs(float(x[7])) <= 1e-8 for x in rows)


def test_risk_rejects_quadratic_without_override(tmp_path):
    cfg = write_json(tmp_path / "r.json", {"command": "risk", "loss": {"kind": "quadratic_test"}})
    assert main(["risk", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_curve_rows(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"command": "curve", "cases": ["I"], "tau_list": [1.0],
                                           "d_grid": [0, 0.5, 1, 1.5, 2, 2.5, 3]})
    assert main(["curve", "--config", cfg, "--out", str(tmp_path)]) == 0
    _, _, rows = read_csv(tmp_path / "curve.csv")
    assert len(rows) == 7


def test_simulate_validation_smoke(tmp_path):
    cfg = write_json(tmp_path / "s.json", {"command": "simulate", "experiment": "validation", "case": "I",
                                           "n": 30, "p": 15, "n1": 60, "reps": 2})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    _, header, rows = read_csv(tmp_path / "a" / "replicates.csv")
    assert header == ["rep", "method", "sq_error", "rel_error", "realized_discrepancy"]
    assert len(rows) == 2
    _, header, rows = read_csv(tmp_path / "a" / "summary.csv")
    assert header == ["method", "mean_sq", "sd_sq", "theory_r2"]


def test_simulate_crossover_rows(tmp_path):
    cfg = write_json(tmp_path / "s.json", {"command": "simulate", "experiment": "crossover", "case": "I",
                                           "n": 20, "p": 10, "n1": 40, "reps": 2, "tau_grid": [0.1, 1.0]})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == 0
    _, header, rows = read_csv(tmp_path / "x" / "summary.csv")
    assert header == ["c_d", "h", "method", "median_rel", "q1", "q3"]
    assert len(rows) == 21


def test_simulate_deterministic_bytes(tmp_path):
    cfg = write_json(tmp_path / "s.json", {"command": "simulate", "case": "II", "n": 30, "p": 15, "n1": 60,
                                           "reps": 4})
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "1"])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3"])
    for name in ("replicates.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_recorded(tmp_path):
    cfg = write_json(tmp_path / "s.json", {"command": "simulate", "n": 20, "p": 10, "n1": 40, "reps": 2,
                                           "seed": 1})
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "99"])
    comments, _, _ = read_csv(tmp_path / "a" / "replicates.csv")
    assert comments[0] == "# seed=99"


def test_no_temp_files_left(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"command": "curve", "cases": ["I"], "tau_list": [1.0], "d_grid": [0]})
    main(["curve", "--config", cfg, "--out", str(tmp_path / "o")])
    assert [p.name for p in (tmp_path / "o").iterdir()] == ["curve.csv"]
