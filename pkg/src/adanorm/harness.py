"""Simulation settings and the rejection-rate experiment runner.

Example 1 tests the marginal correlations of an outcome with ``d``
equicorrelated normal covariates. Example 2 tests the projection
coefficients of ``log P(U = 1 | W_j)`` when the binary outcome is missing at
random. Each replicate ``r`` owns the stream ``(seed, r)``; data, calibration,
bootstrap and permutations use fixed children of it, so a table does not
depend on how replicates are scheduled.
"""

from __future__ import annotations

import csv
import io
import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special, stats

from .errors import AdanormError, ExperimentAborted, InvalidSetting
from .estimators import correlation_estimator, loglinear_missing_estimator
from .measures import MeasureConfig
from .norms import NormSpec, default_family
from .rng import SeededStream
from .testkit import calibrate_families, comparator_pvalues, permutation_test, run_test

TESTS = ("adaptive-lp", "adaptive-ssq", "l2", "linf", "bonferroni", "cauchy", "permutation")
CSV_COLUMNS = ("test", "setting", "n", "d", "rho", "reps", "reject_rate", "ci_lo", "ci_hi")

# children of a replicate stream
DATA_W, DATA_Y, DATA_DELTA, DATA_S = 0, 1, 2, 3
CALIBRATION, BOOTSTRAP, PERMUTATION = 10, 11, 12

EXAMPLE2_RHO = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of the simulation grid."""

    example: int = 1
    setting: int = 1
    n: int = 100
    d: int = 10
    rho: float = 0.0
    reps: int = 500
    tests: tuple = ("adaptive-lp",)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    seed: int = 0
    n_perm: int = 199
    b_reps: int = 400
    cauchy_form: str = "paper"
    shift: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tests", tuple(self.tests))
        if self.example not in (1, 2):
            raise InvalidSetting(f"example must be 1 or 2, got {self.example}")
        valid = (1, 2, 3) if self.example == 1 else (1, 2, 3, 4)
        if self.setting not in valid:
            raise InvalidSetting(f"example {self.example} has settings {valid}, got {self.setting}")
        if self.setting >= 3 and self.d < 10:
            raise InvalidSetting("settings 3 and 4 need d >= 10")
        if self.n < 3 or self.d < 1 or self.reps < 0:
            raise InvalidSetting("need n >= 3, d >= 1 and reps >= 0")
        if not 0.0 <= self.rho < 1.0:
            raise InvalidSetting(f"rho must lie in [0, 1), got {self.rho}")
        if self.example == 2 and self.d < 2:
            raise InvalidSetting("example 2 needs d >= 2")
        for t in self.tests:
            if t not in TESTS:
                raise InvalidSetting(f"unknown test {t!r}; choose from {TESTS}")
        if "permutation" in self.tests and self.example != 1:
            raise InvalidSetting("the permutation test is available for example 1 only")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tests"] = list(self.tests)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if isinstance(data.get("measure"), dict):
            data["measure"] = MeasureConfig(**data["measure"])
        return cls(**data)


def equicorrelated_normals(n: int, d: int, rho: float, stream: SeededStream) -> np.ndarray:
    """``W = sqrt(rho) Z0 1^T + sqrt(1 - rho) Z`` with ``Z0, Z`` standard normal."""
    z = stream.normals(n * (d + 1)).reshape(n, d + 1)
    return math.sqrt(rho) * z[:, :1] + math.sqrt(1.0 - rho) * z[:, 1:]


def example1_mean(w: np.ndarray, setting: int) -> np.ndarray:
    if setting == 1:
        return np.zeros(w.shape[0])
    if setting == 2:
        return 0.25 * w[:, 0]
    if setting == 3:
        return 0.15 * w[:, :5].sum(axis=1) - 0.1 * w[:, 5:10].sum(axis=1)
    raise InvalidSetting(f"example 1 has settings 1-3, got {setting}")


def generate_example1(n: int, d: int, rho: float, setting: int, stream: SeededStream,
                      shift: float = 1.0):
    """Covariates and outcome ``Y = mean(W) + eps`` for example 1.

    ``shift`` multiplies the mean function (1 reproduces the settings).
    """
    if setting not in (1, 2, 3):
        raise InvalidSetting(f"example 1 has settings 1-3, got {setting}")
    if setting == 3 and d < 10:
        raise InvalidSetting("setting 3 needs d >= 10")
    w = equicorrelated_normals(n, d, rho, stream.child(DATA_W))
    eps = stream.child(DATA_Y).normals(n)
    return w, shift * example1_mean(w, setting) + eps


def example2_beta(d: int, setting: int) -> np.ndarray:
    beta = np.zeros(d)
    if setting == 1:
        return beta
    if setting == 2:
        beta[0] = 0.6
    elif setting == 3:
        beta[:5] = 0.32
        beta[5:10] = -0.32
    elif setting == 4:
        beta[:5] = 0.23375
        beta[5:10] = 0.4675
    else:
        raise InvalidSetting(f"example 2 has settings 1-4, got {setting}")
    return beta


def generate_example2(n: int, d: int, setting: int, stream: SeededStream):
    """Covariates, observed outcome ``U = Delta Y`` and indicator ``Delta`` for example 2."""
    if setting in (3, 4) and d < 10:
        raise InvalidSetting("settings 3 and 4 need d >= 10")
    if d < 2:
        raise InvalidSetting("example 2 needs d >= 2")
    beta = example2_beta(d, setting)
    w = equicorrelated_normals(n, d, EXAMPLE2_RHO, stream.child(DATA_W))
    y = (stream.child(DATA_Y).uniforms(n) < special.expit(w @ beta)).astype(float)
    p_obs = special.expit(0.5 + 0.15 * w[:, d - 2] - 0.275 * w[:, d - 1])
    delta = (stream.child(DATA_DELTA).uniforms(n) < p_obs).astype(float)
    return w, delta * y, delta


def generate_two_phase(n: int, stream: SeededStream, slope: float = 0.5,
                       control_rate: float = 0.25):
    """Two-phase cohort with a binary stratum covariate and one biomarker.

    ``W ~ Bernoulli(1/2)``, ``S = 0.5 W + N(0, 1)`` and ``Y ~ Bernoulli(expit(-1.5
    + slope S))`` (about 20% cases at the default slope). Every case enters
    phase two; controls enter with probability ``control_rate``. Returns
    ``(w, s, y, delta)`` with ``w`` of shape ``(n, 1)`` and ``s`` of shape
    ``(n, 1)``, NaN where ``delta = 0``.
    """
    w = (stream.child(DATA_W).uniforms(n) < 0.5).astype(float)
    s = 0.5 * w + stream.child(DATA_S).normals(n)
    y = (stream.child(DATA_Y).uniforms(n) < special.expit(-1.5 + slope * s)).astype(float)
    delta = ((y == 1) | (stream.child(DATA_DELTA).uniforms(n) < control_rate)).astype(float)
    s = np.where(delta == 1, s, np.nan)
    return w[:, None], s[:, None], y, delta


def _families(tests, d):
    fams = {}
    if "adaptive-lp" in tests or "permutation" in tests:
        fams["adaptive-lp"] = default_family("lp", d)
    if "adaptive-ssq" in tests:
        fams["adaptive-ssq"] = default_family("ssq", d)
    if "l2" in tests:
        fams["l2"] = [NormSpec.lp(2)]
    if "linf" in tests:
        fams["linf"] = [NormSpec.lp(math.inf)]
    return fams


def run_replicate(cfg: ExperimentConfig, r: int) -> dict:
    """Reject flags of every requested test on replicate ``r`` (``None`` if unavailable)."""
    root = SeededStream(cfg.seed, r)
    alpha = cfg.measure.alpha
    if cfg.example == 1:
        w, y = generate_example1(cfg.n, cfg.d, cfg.rho, cfg.setting, root, cfg.shift)
        est = correlation_estimator(w, y)
    else:
        w, u, delta = generate_example2(cfg.n, cfg.d, cfg.setting, root)
        est = loglinear_missing_estimator(w, u, delta, b_reps=cfg.b_reps,
                                          seed=root.child(BOOTSTRAP))
    out = {}
    fams = _families(cfg.tests, cfg.d)
    adaptive = [t for t in fams if t in cfg.tests]
    if adaptive:
        cals = calibrate_families(est.sigma_n, [fams[t] for t in adaptive], cfg.measure,
                                  root.child(CALIBRATION))
        for t, cal in zip(adaptive, cals):
            rep = run_test(est, fams[t], cfg.measure, root.child(CALIBRATION),
                           calibration=cal)
            out[t] = rep.reject
    if "bonferroni" in cfg.tests or "cauchy" in cfg.tests:
        comps = comparator_pvalues(est, cfg.cauchy_form)
        if "bonferroni" in cfg.tests:
            out["bonferroni"] = None if comps is None else comps["bonferroni_p"] <= alpha
        if "cauchy" in cfg.tests:
            cp = None if comps is None else comps["cauchy_p"]
            out["cauchy"] = None if cp is None else cp <= alpha
    if "permutation" in cfg.tests:
        rep = permutation_test(w, y, fams["adaptive-lp"], cfg.measure, cfg.n_perm,
                               root.child(PERMUTATION), cauchy_form=cfg.cauchy_form)
        out["permutation"] = rep.reject
    return out


def _safe_replicate(args):
    cfg, r = args
    try:
        return r, run_replicate(cfg, r), None
    except AdanormError as exc:
        return r, None, f"{type(exc).__name__}: {exc}"


def replicate_results(cfg: ExperimentConfig, workers: int = 1) -> list:
    """``(index, flags, error)`` for every replicate, in replicate order."""
    jobs = [(cfg, r) for r in range(cfg.reps)]
    if workers <= 1 or cfg.reps <= 1:
        return [_safe_replicate(j) for j in jobs]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(_safe_replicate, jobs, chunksize=max(1, cfg.reps // (4 * workers))))


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> list[dict]:
    """Rejection rate and Wilson 95% interval of every requested test.

    Replicates whose estimator or calibration fails are dropped from the
    rates; more than 1% of such failures aborts the experiment.
    """
    results = replicate_results(cfg, workers)
    failed = [(r, err) for r, flags, err in results if err is not None]
    if cfg.reps and len(failed) > 0.01 * cfg.reps:
        r, err = failed[0]
        raise ExperimentAborted(f"{len(failed)} of {cfg.reps} replicates failed "
                                f"(first: replicate {r}, {err})")
    rows = []
    if cfg.reps == 0:
        return rows
    for t in cfg.tests:
        flags = [f[t] for _, f, err in results if err is None and f.get(t) is not None]
        k, m = int(sum(flags)), len(flags)
        lo, hi = wilson_interval(k, m) if m else (math.nan, math.nan)
        rows.append({
            "test": t, "setting": cfg.setting, "n": cfg.n, "d": cfg.d, "rho": cfg.rho,
            "reps": m, "reject_rate": k / m if m else math.nan, "ci_lo": lo, "ci_hi": hi,
        })
    return rows


def table_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([
            row["test"], row["setting"], row["n"], row["d"], f"{row['rho']:g}", row["reps"],
            f"{row['reject_rate']:.6f}", f"{row['ci_lo']:.6f}", f"{row['ci_hi']:.6f}",
        ])
    return buf.getvalue()
