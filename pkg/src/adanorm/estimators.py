"""Asymptotically linear estimators and their covariance.

* ``correlation_estimator``: marginal correlations of each covariate with an
  outcome, with the classical correlation influence function.
* ``loglinear_missing_estimator``: coefficients ``cov(W_j, log m_j(W_j)) /
  var(W_j)`` where ``m_j(w) = E[P(U = 1 | Delta = 1, W) | W_j = w]``, with a
  bootstrap covariance.
* ``two_phase_logistic_estimator``: inverse-probability weighted logistic
  regression of an outcome on one biomarker measured in a phase-two subsample,
  with its influence function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import special

from . import _kernels as K
from .errors import (DegenerateCovariate, DegenerateOutcome, DimensionMismatch,
                     EmptyStratum, InsufficientData, NonPositiveSmoother, Separation)
from .rng import CovMatrix, SeededStream

INFLUENCE_FUNCTION = "InfluenceFunction"
BOOTSTRAP = "Bootstrap"


@dataclass(frozen=True, eq=False)
class EstimateResult:
    """An estimate with its influence-function values and covariance.

    ``sigma_n`` estimates the covariance of ``sqrt(n) (psi_n - psi_0)``.
    """

    psi_n: np.ndarray
    n: int
    sigma_n: CovMatrix
    if_matrix: np.ndarray | None = None
    sigma_source: str = INFLUENCE_FUNCTION

    @property
    def d(self) -> int:
        return len(self.psi_n)


def empirical_covariance_from_if(if_matrix) -> CovMatrix:
    """``(1/n) sum_i phi(X_i) phi(X_i)^T`` after centring each column."""
    a = np.asarray(if_matrix, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    n = a.shape[0]
    if n < 2:
        raise InsufficientData("the covariance needs at least two rows")
    c = a - a.mean(axis=0)
    s = c.T @ c / n
    return CovMatrix(0.5 * (s + s.T))


def _standardize(x):
    mu = x.mean(axis=0)
    c = x - mu
    sd = np.sqrt(np.mean(c * c, axis=0))
    return c, sd


def correlation_estimator(w, y) -> EstimateResult:
    """Sample correlation of each column of ``w`` with ``y``.

    The influence function of ``rho_j`` is ``z_w z_y - rho_j (z_w^2 + z_y^2) / 2``
    in standardized coordinates; its columns are centred before use.
    """
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2 or y.shape != (w.shape[0],):
        raise DimensionMismatch("w must be n x d and y of length n")
    n = w.shape[0]
    if n < 3:
        raise InsufficientData("correlations need n >= 3")
    yc, ysd = _standardize(y)
    if not ysd > 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        raise DegenerateOutcome("outcome has zero variance")
    wc, wsd = _standardize(w)
    scale = np.maximum(1.0, np.max(np.abs(w), axis=0))
    if np.any(~(wsd > 1e-12 * scale)):
        raise DegenerateCovariate("a covariate has zero variance")
    zy = yc / ysd
    zw = wc / wsd
    rho = np.clip(np.mean(zw * zy[:, None], axis=0), -1.0, 1.0)
    phi = zw * zy[:, None] - 0.5 * rho * (zw * zw + (zy * zy)[:, None])
    phi = phi - phi.mean(axis=0)
    return EstimateResult(psi_n=rho, n=n, sigma_n=empirical_covariance_from_if(phi),
                          if_matrix=phi, sigma_source=INFLUENCE_FUNCTION)


# ----------------------------------------------------------------------------
# Logistic regression by Newton's method
# ----------------------------------------------------------------------------


def logistic_newton(X, y, weights=None, max_iter: int = 100, tol: float = 1e-10,
                    max_norm: float = 50.0) -> np.ndarray:
    """Maximizer of the weighted logistic log-likelihood.

    Newton steps are halved until the objective does not decrease. Stops
    when the gradient norm (per observation) is at most ``tol``. Raises
    :class:`Separation` when the coefficients exceed ``max_norm`` in norm.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, q = X.shape
    wt = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    tot = wt.sum()

    def loglik(b):
        eta = X @ b
        return float(np.sum(wt * (y * eta - np.logaddexp(0.0, eta)))) / tot

    beta = np.zeros(q)
    ll = loglik(beta)
    for _ in range(max_iter):
        mu = special.expit(X @ beta)
        grad = X.T @ (wt * (y - mu)) / tot
        if np.linalg.norm(grad) <= tol:
            return beta
        hess = (X * (wt * mu * (1.0 - mu))[:, None]).T @ X / tot
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise Separation("singular information matrix in logistic fit") from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c = loglik(cand)
            if ll_c >= ll - 1e-15 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_c
        if np.linalg.norm(beta) > max_norm:
            raise Separation("logistic coefficients diverge (separated data)")
    mu = special.expit(X @ beta)
    if np.linalg.norm(X.T @ (wt * (y - mu)) / tot) <= math.sqrt(tol):
        return beta
    raise Separation("logistic fit did not converge")


class RegressionLearner(Protocol):
    def fit(self, X: np.ndarray, y: np.ndarray) -> "RegressionLearner": ...

    def predict(self, X: np.ndarray) -> np.ndarray: ...


class LogisticLearner:
    """Main-terms logistic regression with intercept."""

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        self.coef_ = logistic_newton(np.column_stack([np.ones(len(X)), X]), y)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return special.expit(self.coef_[0] + X @ self.coef_[1:])


def local_linear_columns(W, target, bandwidth_factor: float = 1.06) -> np.ndarray:
    """Gaussian-kernel local-linear fit of ``target`` on each column of ``W``.

    Column ``j`` of the result holds the fit at the observed ``W[:, j]``, with
    bandwidth ``bandwidth_factor * sd(W_j) * n**(-1/5)``. Points where the
    local design is singular fall back to the local-constant fit.
    """
    W = np.ascontiguousarray(W, dtype=float)
    n, d = W.shape
    t = np.ascontiguousarray(target, dtype=float)
    h = bandwidth_factor * W.std(axis=0) * n ** (-0.2)
    out = np.empty((n, d))
    K.local_linear_fit(W, t, h, out)
    return out


def loglinear_psi(w, u, delta, learner: RegressionLearner | None = None,
                  smoother: Callable | None = None) -> np.ndarray:
    """Point estimate of ``cov(W_j, log m_j(W_j)) / var(W_j)`` for every j."""
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    delta = np.asarray(delta, dtype=float)
    obs = delta == 1
    if not obs.any():
        raise InsufficientData("no complete cases (all delta = 0)")
    var = w.var(axis=0)
    if np.any(~(var > 1e-12 * np.maximum(1.0, np.max(np.abs(w), axis=0) ** 2))):
        raise DegenerateCovariate("a covariate has zero variance")
    learner = learner if learner is not None else LogisticLearner()
    mu = learner.fit(w[obs], u[obs]).predict(w)
    smooth = smoother if smoother is not None else local_linear_columns
    m = smooth(w, mu)
    if not np.all(np.isfinite(m)):
        raise NonPositiveSmoother("outer smoother returned non-finite values")
    logm = np.log(np.clip(m, 1e-6, 1.0))
    wc = w - w.mean(axis=0)
    return np.mean(wc * (logm - logm.mean(axis=0)), axis=0) / var


def loglinear_missing_estimator(w, u, delta, learner: RegressionLearner | None = None,
                                b_reps: int = 400, seed: SeededStream | None = None,
                                smoother: Callable | None = None) -> EstimateResult:
    """Projection coefficients of ``log P(U = 1 | W_j)`` with outcomes missing at random.

    The inner regression ``P(U = 1 | Delta = 1, W)`` is fitted on complete
    cases, marginalized onto each ``W_j`` by a local-linear smoother and
    logged after clipping to ``[1e-6, 1]``. The covariance is a
    nonparametric bootstrap over ``b_reps`` resamples.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    u = np.asarray(u, dtype=float)
    delta = np.asarray(delta, dtype=float)
    n = w.shape[0]
    if u.shape != (n,) or delta.shape != (n,):
        raise DimensionMismatch("w, u and delta must have n rows")

    def est(ww, uu, dd):
        return loglinear_psi(ww, uu, dd, learner, smoother)

    psi = est(w, u, delta)
    seed = seed if seed is not None else SeededStream(0)
    sigma = bootstrap_covariance(est, (w, u, delta), b_reps, seed)
    return EstimateResult(psi_n=psi, n=n, sigma_n=sigma, if_matrix=None,
                          sigma_source=BOOTSTRAP)


def bootstrap_covariance(estimator: Callable, data: Sequence, b_reps: int,
                         seed: SeededStream) -> CovMatrix:
    """``n`` times the sample covariance of the estimator over resamples.

    Resample ``a`` draws row indices from child stream ``a`` of ``seed``; a
    resample on which the estimator raises is replaced by the next stream,
    up to ``10 * b_reps`` attempts in total.
    """
    if b_reps < 2:
        raise InsufficientData("the bootstrap needs at least two replicates")
    arrays = [np.asarray(a) for a in data]
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise DimensionMismatch("all data arrays need the same number of rows")
    reps = []
    attempt = 0
    last_error = None
    while len(reps) < b_reps:
        if attempt >= 10 * b_reps:
            raise last_error
        idx = np.minimum((seed.child(attempt).uniforms(n) * n).astype(np.int64), n - 1)
        attempt += 1
        try:
            val = np.atleast_1d(np.asarray(estimator(*[a[idx] for a in arrays]), dtype=float))
        except (ArithmeticError, ValueError) as exc:
            last_error = exc
            continue
        if not np.all(np.isfinite(val)):
            last_error = NonPositiveSmoother("non-finite bootstrap replicate")
            continue
        reps.append(val)
    r = np.array(reps)
    cov = np.atleast_2d(np.cov(r, rowvar=False, ddof=1)) * n
    return CovMatrix(0.5 * (cov + cov.T))


# ----------------------------------------------------------------------------
# Two-phase sampling
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TwoPhaseRecord:
    """One observation ``(W, S~, Delta, Y)``; ``s_tilde`` is ``None`` when ``delta = 0``."""

    w: tuple
    s_tilde: np.ndarray | None
    delta: int
    y: int

    def __post_init__(self):
        if (self.s_tilde is None) == (self.delta == 1):
            raise DimensionMismatch("biomarkers must be present exactly when delta = 1")


def _stack_records(records):
    w = [tuple(np.atleast_1d(r.w).tolist()) for r in records]
    y = np.array([r.y for r in records], dtype=float)
    delta = np.array([r.delta for r in records], dtype=float)
    q = next(len(np.atleast_1d(r.s_tilde)) for r in records if r.s_tilde is not None)
    s = np.full((len(records), q), np.nan)
    for i, r in enumerate(records):
        if r.s_tilde is not None:
            s[i] = np.atleast_1d(r.s_tilde)
    return w, y, delta, s


def two_phase_logistic_estimator(records, j: int, *, w=None, y=None, delta=None, s=None):
    """Weighted logistic fit of ``Y`` on biomarker ``j`` and the slope's influence function.

    Sampling probabilities are the within-stratum means of ``Delta`` over the
    finite-support strata ``(W, Y)``. Returns ``(beta, if_values)`` where
    ``beta = (intercept, slope)``. Data may be given as a list of
    :class:`TwoPhaseRecord` or as arrays via the keyword arguments (``s`` is
    ``n x q`` and ignored where ``delta = 0``).
    """
    beta, weighted, augmentation = two_phase_if_terms(records, j, w=w, y=y, delta=delta, s=s)
    return beta, weighted + augmentation


def two_phase_if_terms(records, j: int, *, w=None, y=None, delta=None, s=None):
    """Like :func:`two_phase_logistic_estimator` but with the two IF summands apart.

    Returns ``(beta, weighted, augmentation)``: the ``Delta / pi`` weighted
    score and the ``(1 - Delta / pi)`` weighted stratum mean of the score.
    """
    if records is not None:
        w, y, delta, s = _stack_records(records)
    else:
        w = [tuple(np.atleast_1d(r).tolist()) for r in np.asarray(w)]
        y = np.asarray(y, dtype=float)
        delta = np.asarray(delta, dtype=float)
        s = np.asarray(s, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
    n = len(y)
    keys = [(wi, yi) for wi, yi in zip(w, y.tolist())]
    uniq = {}
    stratum = np.array([uniq.setdefault(k, len(uniq)) for k in keys])
    n_s = np.bincount(stratum)
    n1_s = np.bincount(stratum, weights=delta)
    if np.any(n1_s == 0):
        raise EmptyStratum("a (w, y) stratum has no phase-two observations")
    pi = (n1_s / n_s)[stratum]
    obs = delta == 1
    sj = np.where(obs, s[:, j], 0.0)
    if np.any(~np.isfinite(sj[obs])):
        raise DimensionMismatch("missing biomarker value on a phase-two record")
    ipw = np.where(obs, 1.0 / pi, 0.0)
    X = np.column_stack([np.ones(n), sj])
    beta = logistic_newton(X[obs], y[obs], ipw[obs])
    m = special.expit(X @ beta)
    # M = -(1/n) sum Delta/pi m (1 - m) [1, s; s, s^2]
    wgt = ipw * m * (1.0 - m)
    M = -(X * wgt[:, None]).T @ X / n
    a, b = (-np.linalg.inv(M))[1]
    score = np.where(obs, (a + b * sj) * (y - m), 0.0)
    mean_s = np.bincount(stratum, weights=score) / n1_s
    return beta, ipw * score, (1.0 - ipw) * mean_s[stratum]
