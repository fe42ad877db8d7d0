"""Rejection-rate table for example 1 (correlations of W with Y).

Loops over settings, sample sizes and covariate correlations and writes one
CSV with the columns of ``adanorm simulate`` plus the runtime of each cell.

    python scripts/run_example1.py --reps 200 --n 100 200 --out example1.csv
"""

import argparse
import csv
import os
import sys
import time

from adanorm.harness import TESTS, ExperimentConfig, run_experiment
from adanorm.measures import MeasureConfig


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--settings", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--n", type=int, nargs="+", default=[100, 200, 500])
    p.add_argument("--rho", type=float, nargs="+", default=[0.0, 0.5])
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--tests", default="adaptive-lp,adaptive-ssq,l2,linf,bonferroni,cauchy")
    p.add_argument("--measure", choices=("ar", "mf"), default="mf")
    p.add_argument("--m-inner", type=int, default=5000)
    p.add_argument("--m-outer", type=int, default=2000)
    p.add_argument("--n-perm", type=int, default=199)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="-")
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    tests = tuple(t for t in args.tests.split(",") if t)
    unknown = set(tests) - set(TESTS)
    if unknown:
        sys.exit(f"unknown tests: {sorted(unknown)}")
    measure = MeasureConfig(kind=args.measure, m_inner=args.m_inner, m_outer=args.m_outer)
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["test", "setting", "n", "d", "rho", "reps", "reject_rate", "ci_lo",
                     "ci_hi", "seconds"])
    for setting in args.settings:
        for n in args.n:
            for rho in args.rho:
                cfg = ExperimentConfig(example=1, setting=setting, n=n, d=args.d, rho=rho,
                                       reps=args.reps, tests=tests, measure=measure,
                                       seed=args.seed, n_perm=args.n_perm)
                start = time.perf_counter()
                rows = run_experiment(cfg, workers=args.workers)
                secs = time.perf_counter() - start
                for r in rows:
                    writer.writerow([r["test"], setting, n, args.d, f"{rho:g}", r["reps"],
                                     f"{r['reject_rate']:.4f}", f"{r['ci_lo']:.4f}",
                                     f"{r['ci_hi']:.4f}", f"{secs:.1f}"])
                fh.flush()
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
