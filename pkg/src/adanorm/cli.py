"""Command line interface.

Subcommands: ``test`` (adaptive test on a CSV dataset, JSON report),
``simulate`` (rejection-rate table as CSV), ``norms`` (evaluate one norm)
and ``calibrate`` (null sample of the adaptive statistic as CSV).

Exit codes: 0 success, 2 usage error, 3 data or contract error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from .errors import DataError, DimensionMismatch, EmptyInput, NumericError
from .estimators import (EstimateResult, correlation_estimator, empirical_covariance_from_if,
                         loglinear_missing_estimator, two_phase_logistic_estimator)
from .harness import BOOTSTRAP, CALIBRATION, TESTS, ExperimentConfig, run_experiment, table_to_csv
from .measures import MeasureConfig
from .norms import evaluate, parse_family, parse_norm
from .rng import CovMatrix, SeededStream
from .testkit import calibrate_null, run_test

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ESTIMATORS = ("correlation", "loglinear", "two-phase")


def _global_flags() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    g.add_argument("--alpha", type=float, default=0.05)
    g.add_argument("--tau", type=float, default=0.2)
    g.add_argument("--m-inner", type=int, default=5000)
    g.add_argument("--m-outer", type=int, default=2000)
    g.add_argument("--threads", type=int, default=1,
                   help="worker threads (processes for simulate); output never depends on it")
    g.add_argument("--measure", choices=("ar", "mf"), default="mf")
    g.add_argument("--family", default="lp",
                   help="'lp', 'ssq' or a comma-separated list such as l2,linf,ssq:3")
    g.add_argument("--cauchy-form", choices=("paper", "canonical"), default="paper")
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags()
    parser = argparse.ArgumentParser(prog="adanorm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", parents=[g], help="run the adaptive test on a CSV dataset")
    t.add_argument("--csv", required=True)
    t.add_argument("--estimator", choices=ESTIMATORS, default="correlation")
    t.add_argument("--b-reps", type=int, default=400, help="bootstrap replicates (loglinear)")
    t.add_argument("--out", help="write the JSON report here instead of stdout")

    s = sub.add_parser("simulate", parents=[g], help="rejection rates over simulated replicates")
    s.add_argument("--config", help="JSON file with ExperimentConfig fields")
    s.add_argument("--example", type=int, default=1)
    s.add_argument("--setting", type=int, default=1)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--d", type=int, default=10)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--tests", default="adaptive-lp",
                   help="comma-separated subset of " + ",".join(TESTS))
    s.add_argument("--n-perm", type=int, default=199)
    s.add_argument("--b-reps", type=int, default=400)
    s.add_argument("--shift", type=float, default=1.0)
    s.add_argument("--out")

    nm = sub.add_parser("norms", parents=[g], help="evaluate a norm on a vector")
    nm.add_argument("--spec", required=True, help="l1, l2, l4, l6, linf or ssq:k")
    nm.add_argument("--vec", required=True, help="comma-separated coordinates")

    c = sub.add_parser("calibrate", parents=[g], help="null sample of the adaptive statistic")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--cov", help="CSV file holding the covariance matrix (no header)")
    src.add_argument("--csv", help="dataset; its estimated covariance is used")
    src.add_argument("--dim", type=int, help="use the identity covariance of this dimension")
    c.add_argument("--estimator", choices=ESTIMATORS, default="correlation")
    c.add_argument("--b-reps", type=int, default=400)
    c.add_argument("--out")
    return parser


def measure_config(args) -> MeasureConfig:
    return MeasureConfig(kind=args.measure, alpha=args.alpha, tau=args.tau,
                         m_inner=args.m_inner, m_outer=args.m_outer)


def read_table(path: str) -> dict[str, np.ndarray]:
    """Columns of a headed CSV file; blank cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyInput(f"{path} is empty") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyInput(f"{path} has no data rows")
    if any(len(r) != len(header) for r in rows):
        raise DimensionMismatch(f"{path}: rows and header differ in length")
    try:
        data = np.array([[float(c) if c.strip() else math.nan for c in r] for r in rows])
    except ValueError as exc:
        raise DimensionMismatch(f"{path}: non-numeric cell ({exc})") from None
    return {h: data[:, i] for i, h in enumerate(header)}


def _numbered(cols: dict, prefix: str) -> np.ndarray:
    names = []
    j = 1
    while f"{prefix}{j}" in cols:
        names.append(f"{prefix}{j}")
        j += 1
    if not names:
        raise DimensionMismatch(f"no columns {prefix}1, {prefix}2, ... in the data")
    return np.column_stack([cols[nm] for nm in names])


def _need(cols: dict, name: str) -> np.ndarray:
    if name not in cols:
        raise DimensionMismatch(f"missing column {name!r}")
    return cols[name]


def estimate_from_csv(path: str, estimator: str, seed: int, b_reps: int) -> EstimateResult:
    cols = read_table(path)
    if estimator == "correlation":
        w = _numbered(cols, "w")
        y = _need(cols, "y")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(y))):
            raise DimensionMismatch("the correlation estimator needs complete cases")
        return correlation_estimator(w, y)
    if estimator == "loglinear":
        w = _numbered(cols, "w")
        return loglinear_missing_estimator(w, _need(cols, "u"), _need(cols, "delta"),
                                           b_reps=b_reps,
                                           seed=SeededStream(seed, 0).child(BOOTSTRAP))
    w = _numbered(cols, "w")
    s = _numbered(cols, "s")
    y = _need(cols, "y")
    delta = _need(cols, "delta")
    betas, ifs = [], []
    for j in range(s.shape[1]):
        beta, phi = two_phase_logistic_estimator(None, j, w=w, y=y, delta=delta, s=s)
        betas.append(beta[1])
        ifs.append(phi)
    phi = np.column_stack(ifs)
    return EstimateResult(psi_n=np.array(betas), n=len(y),
                          sigma_n=empirical_covariance_from_if(phi), if_matrix=phi)


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_test(args) -> int:
    cfg = measure_config(args)
    est = estimate_from_csv(args.csv, args.estimator, args.seed, args.b_reps)
    family = parse_family(args.family, est.d)
    report = run_test(est, family, cfg, SeededStream(args.seed, 0).child(CALIBRATION),
                      threads=args.threads, cauchy_form=args.cauchy_form)
    _emit(report.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    measure = measure_config(args)
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        data.setdefault("measure", measure)
        cfg = ExperimentConfig.from_dict(data)
    else:
        cfg = ExperimentConfig(
            example=args.example, setting=args.setting, n=args.n, d=args.d, rho=args.rho,
            reps=args.reps, tests=tuple(t.strip() for t in args.tests.split(",") if t.strip()),
            measure=measure, seed=args.seed, n_perm=args.n_perm, b_reps=args.b_reps,
            cauchy_form=args.cauchy_form, shift=args.shift)
    rows = run_experiment(cfg, workers=args.threads)
    _emit(table_to_csv(rows), args.out)
    return EXIT_OK


def cmd_norms(args) -> int:
    try:
        x = np.array([float(v) for v in args.vec.split(",")])
    except ValueError:
        raise DimensionMismatch(f"cannot parse vector {args.vec!r}") from None
    print(format(evaluate(parse_norm(args.spec), x), ".15g"))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = measure_config(args)
    if args.cov:
        sigma = CovMatrix(np.loadtxt(args.cov, delimiter=",", ndmin=2))
    elif args.dim:
        sigma = CovMatrix.identity(args.dim)
    else:
        sigma = estimate_from_csv(args.csv, args.estimator, args.seed, args.b_reps).sigma_n
    family = parse_family(args.family, sigma.dim)
    cal = calibrate_null(sigma, family, cfg, SeededStream(args.seed, 0).child(CALIBRATION),
                         threads=args.threads)
    lines = ["rank,z"] + [f"{i + 1},{v!r}" for i, v in enumerate(cal.null_z_sorted.tolist())]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


COMMANDS = {"test": cmd_test, "simulate": cmd_simulate, "norms": cmd_norms,
            "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
