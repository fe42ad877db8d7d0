"""Monte Carlo measures of test inefficiency.

For a norm ``phi`` and draws ``u_1..u_m`` from the null limit law, the critical
value ``c0`` is the ``ceil((1 - alpha) m)``-th smallest ``phi(u_i)``. Two
measures of how poorly the ``phi``-test detects a shift ``x`` are provided:

* the acceptance rate ``(1/m) #{i : phi(u_i + x) <= c0}``;
* the multiplicative factor ``min{s >= 0 : acceptance_rate(s x) <= tau}``.

All evaluations reuse one antithetic draw matrix, which makes both measures
exactly symmetric in ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, DomainError
from .norms import NormSpec, to_norm, transformed_values
from .rng import DrawMatrix

AR = "ar"
MF = "mf"
_KINDS = {AR: 0, MF: 1}
# pilot directions used to centre the bracket search (see guess_scale)
N_PILOT = 16


@dataclass(frozen=True)
class MeasureConfig:
    """Measure choice, levels and Monte Carlo budgets.

    Parameters
    ----------
    kind : {"ar", "mf"}
        Acceptance rate or multiplicative factor.
    alpha : float
        Nominal level.
    tau : float
        Target type II error of the multiplicative factor, in (0, 1 - alpha).
    m_inner : int
        Even number of draws used to evaluate the measure.
    m_outer : int
        Even number of null draws of the adaptive statistic.
    bisect_rel_tol : float
        Relative width at which the bisection stops.
    max_doublings : int
        Factors above ``2**max_doublings`` are reported as ``inf``.
    """

    kind: str = MF
    alpha: float = 0.05
    tau: float = 0.2
    m_inner: int = 5000
    m_outer: int = 2000
    bisect_rel_tol: float = 1e-6
    max_doublings: int = 60

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"measure kind must be 'ar' or 'mf', got {self.kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.tau < 1.0 - self.alpha:
            raise DomainError(f"tau must lie in (0, 1 - alpha), got {self.tau}")
        for name in ("m_inner", "m_outer"):
            val = getattr(self, name)
            if int(val) != val or val < 2 or val % 2:
                raise DomainError(f"{name} must be an even integer >= 2, got {val}")
        if not self.bisect_rel_tol > 0.0:
            raise DomainError("bisect_rel_tol must be positive")
        if self.max_doublings < 1:
            raise DomainError("max_doublings must be >= 1")

    @property
    def kind_code(self) -> int:
        return _KINDS[self.kind]


@dataclass(frozen=True, eq=False)
class NormCalibration:
    """Critical value of one norm on one draw matrix.

    ``sorted_norm_values`` are the norms of the draws in ascending order and
    ``c0`` is the ``ceil((1 - alpha) m)``-th of them.
    """

    spec: NormSpec
    c0: float
    sorted_norm_values: np.ndarray = field(repr=False)
    alpha: float = 0.05
    # kernel view: (code, p, k), t-space cutoff and per-row t values
    kernel: tuple = field(repr=False, default=None)
    t_crit: float = field(repr=False, default=None)
    row_t: np.ndarray = field(repr=False, default=None)
    _scales: dict = field(repr=False, default_factory=dict, compare=False)

    def guess_scale(self, draws: DrawMatrix, tau: float, rel_tol: float,
                    max_doublings: int) -> float:
        key = (tau, rel_tol, max_doublings)
        if key not in self._scales:
            code, p, k = self.kernel
            self._scales[key] = float(K.guess_scale(
                code, p, k, draws.rows, self.row_t, self.t_crit, self.c0,
                draws.source_cov.entries, tau, rel_tol, max_doublings,
                K.ndtri(1.0 - tau), N_PILOT))
        return self._scales[key]


def order_index(alpha: float, m: int) -> int:
    """1-based index ``ceil((1 - alpha) m)``, guarded against rounding noise."""
    r = (1.0 - alpha) * m
    idx = math.ceil(r - 1e-9 * max(1.0, r))
    return min(max(idx, 1), m)


def critical_value(spec: NormSpec, draws: DrawMatrix, alpha: float) -> NormCalibration:
    """Smallest cutoff accepting at least a fraction ``1 - alpha`` of the draws."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    rows = draws.rows
    if rows.shape[0] == 0:
        raise DomainError("critical_value needs at least one draw")
    d = rows.shape[1]
    row_t = transformed_values(spec, rows)
    row_t.setflags(write=False)
    t_sorted = np.sort(row_t)
    t_crit = float(t_sorted[order_index(alpha, rows.shape[0]) - 1])
    sorted_vals = to_norm(spec, d, t_sorted)
    sorted_vals.setflags(write=False)
    return NormCalibration(
        spec=spec,
        c0=float(to_norm(spec, d, t_crit)),
        sorted_norm_values=sorted_vals,
        alpha=alpha,
        kernel=spec.kernel(d),
        t_crit=t_crit,
        row_t=row_t,
    )


def _vector(x, d: int) -> np.ndarray:
    x = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)))
    if x.shape != (d,):
        raise DimensionMismatch(f"expected a vector of length {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("measures are evaluated at finite vectors only")
    return x


def acceptance_rate(x, cal: NormCalibration, draws: DrawMatrix) -> float:
    """Fraction of draws ``u`` with ``phi(u + x) <= c0``."""
    x = _vector(x, draws.dim)
    code, p, k = cal.kernel
    m = draws.m
    return K.count_capped(code, p, k, draws.rows, 1.0, x, cal.t_crit, m) / m


def multiplicative_factor(x, cal: NormCalibration, draws: DrawMatrix,
                          cfg: MeasureConfig) -> float:
    """Smallest ``s >= 0`` with ``acceptance_rate(s x) <= tau``; ``inf`` at ``x = 0``.

    The factor is found along the unit direction ``v = x / |x|_2`` and divided
    by ``|x|_2``, so ``f(beta x) = f(x) / beta`` holds up to one rounding.
    The bracket search starts from a linearised guess rescaled by a per-norm
    pilot factor and grows geometrically until it holds the crossing; plain
    bisection then narrows it to ``bisect_rel_tol``.
    """
    if cfg.kind != MF:
        raise DomainError("multiplicative_factor needs a config with kind 'mf'")
    x = _vector(x, draws.dim)
    return gammas(x, [cal], draws, cfg)[0]


def _pack(cals, draws: DrawMatrix, cfg: MeasureConfig):
    codes = np.array([c.kernel[0] for c in cals], dtype=np.int64)
    ps = np.array([c.kernel[1] for c in cals], dtype=float)
    ks = np.array([c.kernel[2] for c in cals], dtype=np.int64)
    T0 = np.ascontiguousarray(np.stack([c.row_t for c in cals]))
    t_crits = np.array([c.t_crit for c in cals], dtype=float)
    c0s = np.array([c.c0 for c in cals], dtype=float)
    if cfg.kind == MF:
        scales = np.array([c.guess_scale(draws, cfg.tau, cfg.bisect_rel_tol,
                                         cfg.max_doublings) for c in cals])
    else:
        scales = np.ones(len(cals))
    return codes, ps, ks, T0, t_crits, c0s, scales


def gammas(x, cals, draws: DrawMatrix, cfg: MeasureConfig) -> np.ndarray:
    """Measure values of ``x`` for every calibration in ``cals``."""
    x = _vector(x, draws.dim)
    codes, ps, ks, T0, t_crits, c0s, scales = _pack(cals, draws, cfg)
    per = np.empty(len(cals))
    best = np.empty(1)
    masks = np.ones(len(cals), dtype=np.int64)
    K.gamma_direction(codes, ps, ks, masks, draws.rows, T0, t_crits, c0s, scales,
                      draws.source_cov.entries, x, cfg.kind_code, cfg.tau,
                      cfg.bisect_rel_tol, cfg.max_doublings, K.ndtri(1.0 - cfg.tau),
                      False, per, best)
    return per
