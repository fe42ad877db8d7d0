"""The adaptive statistic, its Monte Carlo null calibration and the tests built
on it.

Given ``U_n = sqrt(n) psi_n`` and a family of norms, the statistic is the
smallest measure value over the family. Small values mean that some norm
test would detect ``U_n`` easily, so the test rejects for small values: the
p-value is ``(1 + #{null draws <= Z_n}) / (M + 1)`` and ``H0`` is rejected
when it is at most ``alpha``.

Streams under the calibration seed: the inner draw matrix uses child 0, outer
null draw ``j`` uses child ``1 + j`` and permutation ``b`` uses child
``PERMUTATION_BASE + b``.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .comparators import bonferroni_p, cauchy_combination, wald_pvalues
from .errors import (DegenerateVariance, DimensionMismatch, InsufficientData,
                     PoleInput)
from .estimators import EstimateResult, correlation_estimator
from .measures import MeasureConfig, NormCalibration, _pack, critical_value, gammas
from .norms import transformed_values
from .rng import (CovMatrix, DrawMatrix, SeededStream, as_cov,
                  cholesky_with_jitter, outer_normals, sample_mvn)

PERMUTATION_BASE = 1 << 63
# outer draws handed to one kernel call; fixed so results never depend on threads
_BLOCK = 32


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Null calibration of the adaptive statistic for one family.

    ``null_z_sorted`` holds the statistic at ``m_outer`` independent null
    draws in ascending order; ``threshold`` is its ``floor(alpha m_outer)``-th
    value (``-inf`` when that index is 0).
    """

    norm_cals: list
    null_z_sorted: np.ndarray
    threshold: float
    alpha: float
    seeds: dict
    family: tuple
    measure: MeasureConfig
    draws: DrawMatrix = field(repr=False)
    jitter: float = 0.0

    @property
    def fingerprint(self) -> str:
        return family_fingerprint(self.family, self.measure)


def family_fingerprint(family, cfg: MeasureConfig) -> str:
    text = "|".join(s.name for s in family) + f"#{cfg.kind}:{cfg.alpha}:{cfg.tau}"
    text += f":{cfg.m_inner}:{cfg.m_outer}:{cfg.bisect_rel_tol}:{cfg.max_doublings}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _json_number(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


@dataclass(frozen=True, eq=False)
class TestReport:
    """Outcome of one adaptive test."""

    __test__ = False  # not a pytest class

    u_n: np.ndarray
    z_n: float
    per_norm_gamma: list
    selected_norm: int
    p_value: float
    reject: bool
    alpha: float
    comparators: dict | None
    seeds: dict
    family: tuple
    family_fingerprint: str

    def to_dict(self) -> dict:
        comps = None
        if self.comparators is not None:
            comps = {k: (_json_number(v) if isinstance(v, (float, int)) and not isinstance(v, bool)
                         else v) for k, v in self.comparators.items()}
        return {
            "u_n": [_json_number(v) for v in self.u_n],
            "z_n": _json_number(self.z_n),
            "per_norm": [{"norm": s.name, "gamma": _json_number(g)} for s, g in self.per_norm_gamma],
            "selected_norm": int(self.selected_norm),
            "p_value": _json_number(self.p_value),
            "reject": bool(self.reject),
            "alpha": float(self.alpha),
            "comparators": comps,
            "seeds": self.seeds,
            "family": [s.name for s in self.family],
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def adaptive_statistic(u, cals, draws: DrawMatrix, cfg: MeasureConfig):
    """``(z, per_norm, selected)``: the minimum measure over ``cals``.

    ``per_norm`` pairs each norm with its measure value at ``u`` and
    ``selected`` is the first index attaining the minimum.
    """
    if len(cals) == 0:
        raise DimensionMismatch("the norm family is empty")
    u = np.ascontiguousarray(np.atleast_1d(np.asarray(u, dtype=float)))
    if u.shape != (draws.dim,):
        raise DimensionMismatch(f"expected a vector of length {draws.dim}, got {u.shape}")
    vals = gammas(u, cals, draws, cfg)
    selected = int(np.argmin(vals))
    return float(vals[selected]), [(c.spec, float(v)) for c, v in zip(cals, vals)], selected


def _unique_kernels(families, d):
    keys, index = [], {}
    for fam in families:
        for spec in fam:
            key = spec.kernel(d)
            if key not in index:
                index[key] = len(keys)
                keys.append((key, spec))
    return keys, index


def _inner_draws(sigma: CovMatrix, cfg: MeasureConfig, seed: SeededStream):
    L, eps = cholesky_with_jitter(sigma)
    return sample_mvn(L, cfg.m_inner, seed.child(0), sigma=sigma), eps


def _null_statistics(draws, cals, masks, cfg, seed, n_groups, threads, start=0):
    d = draws.dim
    m_outer = cfg.m_outer
    z = outer_normals(seed, 1 + start, m_outer, d)
    # L z_j for each outer draw with the same fixed summation as the inner rows
    pairs = np.empty((2 * m_outer, d))
    K.antithetic_rows(z, draws.chol, pairs)
    outer = np.ascontiguousarray(pairs[::2])
    codes, ps, ks, T0, t_crits, c0s, scales = _pack(cals, draws, cfg)
    out = np.empty((m_outer, n_groups))
    z_tau = K.ndtri(1.0 - cfg.tau)
    sigma = draws.source_cov.entries

    def run(lo):
        hi = min(lo + _BLOCK, m_outer)
        K.null_block(codes, ps, ks, masks, draws.rows, T0, t_crits, c0s, scales,
                     sigma, outer[lo:hi], cfg.kind_code, cfg.tau, cfg.bisect_rel_tol,
                     cfg.max_doublings, z_tau, out[lo:hi])

    starts = range(0, m_outer, _BLOCK)
    if threads is None or threads <= 1:
        for lo in starts:
            run(lo)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    return out


def threshold_of(null_sorted: np.ndarray, alpha: float) -> float:
    j = int(math.floor(alpha * len(null_sorted) + 1e-9))
    return float(null_sorted[j - 1]) if j >= 1 else -math.inf


def calibrate_families(sigma_n, families, cfg: MeasureConfig, seed: SeededStream,
                       threads: int = 1) -> list[CalibrationResult]:
    """Calibrate several families on one shared set of inner and outer draws.

    Norms common to several families are evaluated once per null draw. The
    result for each family is identical to :func:`calibrate_null` on that
    family alone.
    """
    sigma = as_cov(sigma_n)
    d = sigma.dim
    for fam in families:
        if len(fam) == 0:
            raise DimensionMismatch("the norm family is empty")
        for spec in fam:
            spec.check_dim(d)
    if len(families) > 62:
        raise DimensionMismatch("too many families in one calibration")
    draws, eps = _inner_draws(sigma, cfg, seed)
    keys, index = _unique_kernels(families, d)
    base = [critical_value(spec, draws, cfg.alpha) for _, spec in keys]
    masks = np.zeros(len(keys), dtype=np.int64)
    for g, fam in enumerate(families):
        for spec in fam:
            masks[index[spec.kernel(d)]] |= 1 << g
    null = _null_statistics(draws, base, masks, cfg, seed, len(families), threads)
    seeds = {
        "seed": seed.seed,
        "stream_index": seed.stream_index,
        "inner_stream": 0,
        "outer_streams": [1, cfg.m_outer],
    }
    results = []
    for g, fam in enumerate(families):
        cals = []
        for spec in fam:
            b = base[index[spec.kernel(d)]]
            cals.append(b if b.spec == spec else replace(b, spec=spec, _scales=b._scales))
        z_sorted = np.sort(null[:, g])
        z_sorted.setflags(write=False)
        results.append(CalibrationResult(
            norm_cals=cals,
            null_z_sorted=z_sorted,
            threshold=threshold_of(z_sorted, cfg.alpha),
            alpha=cfg.alpha,
            seeds=dict(seeds),
            family=tuple(fam),
            measure=cfg,
            draws=draws,
            jitter=eps,
        ))
    return results


def calibrate_null(sigma_n, family, cfg: MeasureConfig, seed: SeededStream,
                   threads: int = 1) -> CalibrationResult:
    """Null distribution of the adaptive statistic by nested Monte Carlo.

    One inner draw matrix of size ``m_inner`` gives the critical values and
    every measure evaluation; ``m_outer`` independent outer draws from
    ``N(0, sigma_n)`` give the null sample. The result does not depend on
    ``threads``.
    """
    return calibrate_families(sigma_n, [list(family)], cfg, seed, threads)[0]


def p_value(z_n: float, calib: CalibrationResult) -> float:
    """``(1 + #{null <= z_n}) / (M + 1)``."""
    null = calib.null_z_sorted
    count = int(np.searchsorted(null, z_n, side="right"))
    return (1 + count) / (len(null) + 1)


def comparator_pvalues(est: EstimateResult, cauchy_form: str = "paper") -> dict | None:
    """Bonferroni and Cauchy p-values from per-coordinate Wald tests."""
    try:
        wald = wald_pvalues(est.psi_n, est.sigma_n, est.n)
    except DegenerateVariance:
        return None
    out = {"bonferroni_p": bonferroni_p(wald.p_values), "cauchy_p": None,
           "cauchy_form": cauchy_form}
    try:
        out["cauchy_p"] = cauchy_combination(wald.p_values, form=cauchy_form)[1]
    except PoleInput:
        pass
    return out


def run_test(est: EstimateResult, family, cfg: MeasureConfig, seed: SeededStream,
             threads: int = 1, cauchy_form: str = "paper",
             calibration: CalibrationResult | None = None) -> TestReport:
    """Adaptive test of ``psi_0 = 0`` from an estimate and its covariance.

    A precomputed ``calibration`` for the same covariance, family and config
    may be supplied to avoid recalibrating.
    """
    family = list(family)
    if est.n < 2 or len(est.psi_n) < 1:
        raise InsufficientData("the test needs n >= 2 and d >= 1")
    u = math.sqrt(est.n) * np.asarray(est.psi_n, dtype=float)
    cal = calibration or calibrate_null(est.sigma_n, family, cfg, seed, threads)
    if cal.fingerprint != family_fingerprint(family, cfg):
        raise DimensionMismatch("calibration was built for a different family or config")
    z, per, sel = adaptive_statistic(u, cal.norm_cals, cal.draws, cfg)
    p = p_value(z, cal)
    return TestReport(
        u_n=u, z_n=z, per_norm_gamma=per, selected_norm=sel, p_value=p,
        reject=p <= cfg.alpha, alpha=cfg.alpha,
        comparators=comparator_pvalues(est, cauchy_form), seeds=cal.seeds,
        family=tuple(family), family_fingerprint=cal.fingerprint,
    )


def norm_test_reject(u, cal: NormCalibration) -> bool:
    """Classical single-norm test: reject when ``phi(u)`` exceeds ``c0``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    return bool(transformed_values(cal.spec, u)[0] > cal.t_crit)


def _statistic_under(sigma: CovMatrix, u, family, cfg, inner: SeededStream, scales):
    # adaptive statistic with draws rebuilt from sigma on a fixed inner stream
    L, _ = cholesky_with_jitter(sigma)
    draws = sample_mvn(L, cfg.m_inner, inner, sigma=sigma)
    cals = [critical_value(s, draws, cfg.alpha) for s in family]
    for c, sc in zip(cals, scales):
        c._scales[(cfg.tau, cfg.bisect_rel_tol, cfg.max_doublings)] = sc
    codes, ps, ks, T0, t_crits, c0s, sc_arr = _pack(cals, draws, cfg)
    per = np.empty(len(cals))
    best = np.empty(1)
    K.gamma_direction(codes, ps, ks, np.ones(len(cals), dtype=np.int64), draws.rows,
                      T0, t_crits, c0s, sc_arr, draws.source_cov.entries,
                      np.ascontiguousarray(u, dtype=float), cfg.kind_code, cfg.tau,
                      cfg.bisect_rel_tol, cfg.max_doublings, K.ndtri(1.0 - cfg.tau),
                      True, per, best)
    return float(best[0])


def permutation_test(w, y, family, cfg: MeasureConfig, n_perm: int, seed: SeededStream,
                     threads: int = 1, cauchy_form: str = "paper") -> TestReport:
    """Correlation test calibrated by permuting the outcome.

    Each permuted dataset gets its own estimate and covariance; its statistic
    is computed with inner draws from the same stream as the original data.
    """
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.ndim != 2 or y.shape != (w.shape[0],):
        raise DimensionMismatch("w must be n x d and y of length n")
    if w.shape[0] < 3:
        raise InsufficientData("the permutation test needs n >= 3")
    if n_perm < 1:
        raise InsufficientData("n_perm must be >= 1")
    family = list(family)
    est = correlation_estimator(w, y)
    n = est.n
    u = math.sqrt(n) * est.psi_n
    inner = seed.child(0)
    L, _ = cholesky_with_jitter(est.sigma_n)
    draws = sample_mvn(L, cfg.m_inner, inner, sigma=est.sigma_n)
    cals = [critical_value(s, draws, cfg.alpha) for s in family]
    z, per, sel = adaptive_statistic(u, cals, draws, cfg)
    key = (cfg.tau, cfg.bisect_rel_tol, cfg.max_doublings)
    scales = [c._scales.get(key, 1.0) for c in cals]
    root = seed.child_seed()

    def one(b):
        perm = K.permutation(np.uint64(root), np.uint64(PERMUTATION_BASE + b), n)
        est_b = correlation_estimator(w, y[perm])
        return _statistic_under(est_b.sigma_n, math.sqrt(n) * est_b.psi_n, family,
                                cfg, inner, scales)

    if threads is None or threads <= 1:
        zs = [one(b) for b in range(1, n_perm + 1)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            zs = list(pool.map(one, range(1, n_perm + 1)))
    zs = np.array(zs)
    p = (1 + int(np.sum(zs <= z))) / (n_perm + 1)
    seeds = {"seed": seed.seed, "stream_index": seed.stream_index, "inner_stream": 0,
             "permutation_streams": [PERMUTATION_BASE + 1, n_perm]}
    return TestReport(
        u_n=u, z_n=z, per_norm_gamma=per, selected_norm=sel, p_value=p,
        reject=p <= cfg.alpha, alpha=cfg.alpha,
        comparators=comparator_pvalues(est, cauchy_form), seeds=seeds,
        family=tuple(family), family_fingerprint=family_fingerprint(family, cfg),
    )
