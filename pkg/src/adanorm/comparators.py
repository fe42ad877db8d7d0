"""Coordinate-wise Wald tests combined by Bonferroni or by a Cauchy combination."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateVariance, DomainError, EmptyInput, PoleInput
from .rng import as_cov

POLE_TOL = 1e-12
CAUCHY_FORMS = ("paper", "canonical")


@dataclass(frozen=True, eq=False)
class WaldSummary:
    """Per-coordinate statistics ``z_j = sqrt(n) |psi_j| / sigma_j`` and
    two-sided p-values ``2 (1 - Phi(z_j))``."""

    z_scores: np.ndarray
    p_values: np.ndarray


def wald_pvalues(psi_n, sigma_n, n: int) -> WaldSummary:
    psi = np.atleast_1d(np.asarray(psi_n, dtype=float))
    var = np.diag(as_cov(sigma_n).entries)
    if var.shape != psi.shape:
        raise DomainError("psi and sigma dimensions differ")
    if np.any(~(var > 0)):
        raise DegenerateVariance("covariance diagonal must be strictly positive")
    z = math.sqrt(n) * np.abs(psi) / np.sqrt(var)
    # 2 (1 - Phi(z)) written without the cancellation; floored so that a
    # z beyond ~38 still gives a positive p-value
    p = np.maximum(special.erfc(z / math.sqrt(2.0)), np.finfo(float).tiny)
    return WaldSummary(z_scores=z, p_values=p)


def bonferroni_p(p_values) -> float:
    p = np.atleast_1d(np.asarray(p_values, dtype=float))
    if p.size == 0:
        raise EmptyInput("no p-values to combine")
    if np.any((p <= 0) | (p > 1)):
        raise DomainError("p-values must lie in (0, 1]")
    return float(min(1.0, p.size * p.min()))


def cauchy_combination(p_values, form: str = "paper") -> tuple[float, float]:
    """Cauchy combination statistic and its upper-tail p-value.

    ``form="paper"`` averages ``tan((2 p - 3/2) pi)``, which has poles at
    p = 1/2 and p = 1; ``form="canonical"`` averages ``tan((1/2 - p) pi)``,
    with a pole at p = 1. The p-value is ``1/2 - arctan(statistic) / pi``.
    """
    p = np.atleast_1d(np.asarray(p_values, dtype=float))
    if p.size == 0:
        raise EmptyInput("no p-values to combine")
    if np.any((p <= 0) | (p > 1)):
        raise DomainError("p-values must lie in (0, 1]")
    if form == "paper":
        if np.any(np.abs(p - 0.5) < POLE_TOL) or np.any(np.abs(p - 1.0) < POLE_TOL):
            raise PoleInput("p-value at a pole of tan((2p - 3/2) pi)")
        terms = np.tan((2.0 * p - 1.5) * math.pi)
    elif form == "canonical":
        if np.any(np.abs(p - 1.0) < POLE_TOL):
            raise PoleInput("p-value at the pole of tan((1/2 - p) pi)")
        terms = np.tan((0.5 - p) * math.pi)
    else:
        raise DomainError(f"unknown Cauchy form {form!r}; use one of {CAUCHY_FORMS}")
    # correctly rounded sum: terms near the poles are large and cancel, and
    # the statistic must not depend on the order of the p-values
    stat = math.fsum(terms.tolist()) / p.size
    return stat, float(0.5 - math.atan(stat) / math.pi)
