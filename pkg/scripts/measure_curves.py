"""Acceptance rate and multiplicative factor along a ray, for several norms.

Prints a CSV with one row per (norm, scale) so that the inefficiency of each
norm in a chosen direction can be plotted or compared.

    python scripts/measure_curves.py --d 10 --direction sparse
"""

import argparse
import csv
import sys

import numpy as np

from adanorm.measures import MeasureConfig, acceptance_rate, critical_value, multiplicative_factor
from adanorm.norms import default_family
from adanorm.rng import CovMatrix, SeededStream, cholesky_factor, sample_mvn


def direction(kind: str, d: int) -> np.ndarray:
    if kind == "sparse":
        v = np.zeros(d)
        v[0] = 1.0
    elif kind == "dense":
        v = np.ones(d)
    else:
        v = np.zeros(d)
        v[: max(1, d // 3)] = 1.0
    return v / np.linalg.norm(v)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--rho", type=float, default=0.0, help="equicorrelation of the null law")
    p.add_argument("--direction", choices=("sparse", "dense", "third"), default="sparse")
    p.add_argument("--scales", type=float, nargs="+", default=[0.5, 1, 2, 3, 4, 5, 6])
    p.add_argument("--m-inner", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    d = args.d
    sigma = CovMatrix((1 - args.rho) * np.eye(d) + args.rho * np.ones((d, d)))
    draws = sample_mvn(cholesky_factor(sigma), args.m_inner, SeededStream(args.seed),
                       sigma=sigma)
    cfg = MeasureConfig(kind="mf", m_inner=args.m_inner)
    v = direction(args.direction, d)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["norm", "scale", "acceptance_rate", "mult_factor"])
    for spec in default_family("lp", d) + default_family("ssq", d):
        cal = critical_value(spec, draws, cfg.alpha)
        for s in args.scales:
            x = s * v
            writer.writerow([spec.name, f"{s:g}", f"{acceptance_rate(x, cal, draws):.5f}",
                             f"{multiplicative_factor(x, cal, draws, cfg):.5f}"])


if __name__ == "__main__":
    main()
