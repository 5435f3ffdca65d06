"""Spread of the Trans-RR squared error as the dimension grows (Case I, p = n).

    python scripts/dispersion.py --p 100 200 400 --reps 300
"""
import argparse
from pathlib import Path

from transrr.cli import atomic_write, csv_text
from transrr.loss import LossModel
from transrr.simulation import CaseSpec, CoefficientDesign, run_validation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", nargs="+", type=int, default=[100, 200, 400])
    ap.add_argument("--reps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="runs/dispersion")
    args = ap.parse_args()

    rows = []
    for p in args.p:
        spec = CaseSpec("I", p, p, 2 * p, args.seed)
        s = run_validation(spec, CoefficientDesign.diffuse(spec), LossModel(), reps=args.reps,
                           threads=args.threads)
        rows.append((p, s.mean_sq, s.sd_sq, s.theory_r2))
        print(f"p={p:4d}  mean {s.mean_sq:.4f}  sd {s.sd_sq:.4f}  theory {s.theory_r2:.4f}", flush=True)
    atomic_write(Path(args.out) / "dispersion.csv",
                 csv_text(["p", "mean_sq", "sd_sq", "theory_r2"], rows, args.seed))


if __name__ == "__main__":
    main()
