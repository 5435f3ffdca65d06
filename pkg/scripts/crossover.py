"""Median relative error of Single-, Trans- and Pooled-RR across h = exp(c_d).

    python scripts/crossover.py --case I --p 400 --reps 100 --out runs/crossover
"""
import argparse
from pathlib import Path

from transrr.cli import atomic_write, csv_text
from transrr.loss import LossModel
from transrr.simulation import CROSSOVER_GRID, CaseSpec, run_crossover


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default="I")
    ap.add_argument("--p", type=int, default=400)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--c-d", nargs="+", type=float, default=list(CROSSOVER_GRID))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="runs/crossover")
    args = ap.parse_args()

    spec = CaseSpec(args.case, args.p, args.p, 2 * args.p, args.seed)
    s = run_crossover(spec, args.c_d, LossModel(), reps=args.reps, threads=args.threads)
    med = {(c, m): v for c, _, m, v, _, _ in s.rows}
    print(f"{'c_d':>5s} {'h':>6s} {'single':>8s} {'trans':>8s} {'pooled':>8s}")
    for c in args.c_d:
        h = next(row[1] for row in s.rows if row[0] == c)
        print(f"{c:5.1f} {h:6.3f} " + " ".join(f"{med[(c, m)]:8.4f}" for m in ("single", "trans", "pooled")))
    header = ["c_d", "h", "method", "median_rel", "q1", "q3"]
    atomic_write(Path(args.out) / "crossover.csv", csv_text(header, s.rows, args.seed,
                                                            [f"failures={s.failures}"]))


if __name__ == "__main__":
    main()
