"""Portable random streams, standard normal transforms and multivariate normal
draws with antithetic pairing.

Every random quantity in the package comes from a :class:`SeededStream`: a
xoshiro256++ generator whose state is derived by splitmix64 from a
``(seed, stream_index)`` pair. The generator and the inverse-CDF normal
transform are implemented in compiled code with fixed arithmetic, so a given
pair yields the same numbers on every platform and in every thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _kernels as K
from .errors import DimensionMismatch, DomainError, NotPositiveDefinite

_U64 = (1 << 64) - 1
JITTER_STEPS = (1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class SeededStream:
    """One independent stream of 64-bit uniforms.

    Parameters
    ----------
    seed : int
        Root seed, reduced modulo 2**64.
    stream_index : int
        Stream number under ``seed``; distinct indices give independent
        streams.
    """

    seed: int
    stream_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _U64)
        object.__setattr__(self, "stream_index", int(self.stream_index) & _U64)

    def u64(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        K.fill_u64(np.uint64(self.seed), np.uint64(self.stream_index), out)
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` uniforms on the open interval (0, 1)."""
        out = np.empty(n)
        K.fill_uniform(np.uint64(self.seed), np.uint64(self.stream_index), out)
        return out

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normals by inverse CDF of :meth:`uniforms`."""
        out = np.empty(n)
        K.fill_normal(np.uint64(self.seed), np.uint64(self.stream_index), out)
        return out

    def child_seed(self) -> int:
        return int(K.derive_seed(np.uint64(self.seed), np.uint64(self.stream_index)))

    def child(self, j: int) -> "SeededStream":
        """Stream ``j`` of a sub-family owned by this stream."""
        return SeededStream(self.child_seed(), j)

    def describe(self) -> dict:
        return {"seed": self.seed, "stream_index": self.stream_index}


@dataclass(frozen=True, eq=False)
class CovMatrix:
    """Symmetric covariance matrix, stored read-only."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionMismatch(f"covariance must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("covariance has non-finite entries")
        asym = np.abs(a - a.T)
        if np.any(asym > 1e-12 * np.maximum(1.0, np.abs(a))):
            raise DomainError("covariance is not symmetric")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, d: int) -> "CovMatrix":
        return cls(np.eye(d))


@dataclass(frozen=True, eq=False)
class DrawMatrix:
    """Antithetic Monte Carlo draws: ``rows[2i + 1] == -rows[2i]``."""

    rows: np.ndarray
    source_cov: CovMatrix
    source_seed: SeededStream
    chol: np.ndarray = field(repr=False, default=None)

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def as_cov(sigma) -> CovMatrix:
    return sigma if isinstance(sigma, CovMatrix) else CovMatrix(np.asarray(sigma, dtype=float))


def cholesky_with_jitter(sigma) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor and the jitter level that was needed (0 if none).

    On failure the matrix is retried with ``eps * trace / d`` added to the
    diagonal for ``eps`` in 1e-10, 1e-8, 1e-6.
    """
    a = as_cov(sigma).entries
    d = a.shape[0]
    scale = np.trace(a) / d
    for eps in (0.0,) + JITTER_STEPS:
        trial = a if eps == 0.0 else a + eps * scale * np.eye(d)
        try:
            L = np.linalg.cholesky(trial)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0):
            return L, eps
    raise NotPositiveDefinite(
        f"covariance is not positive definite after jitter up to {JITTER_STEPS[-1]:g}"
    )


def cholesky_factor(sigma) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == sigma`` (jittered if needed)."""
    return cholesky_with_jitter(sigma)[0]


def std_normal_cdf(x):
    """Standard normal CDF, ``erfc(-x / sqrt 2) / 2``."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))


def std_normal_quantile(u):
    """Inverse of :func:`std_normal_cdf` on (0, 1) (Wichura's AS 241)."""
    arr = np.asarray(u, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("quantile argument must lie in the open interval (0, 1)")
    if arr.ndim == 0:
        return float(K.ndtri(float(arr)))
    return np.array([K.ndtri(float(v)) for v in arr.ravel()]).reshape(arr.shape)


def sample_mvn(chol, m: int, stream: SeededStream, sigma=None) -> DrawMatrix:
    """``m`` antithetic draws from ``N(0, L L^T)``.

    Row ``2i`` is ``L z_i`` where ``z_i`` holds normals ``i*d .. i*d + d - 1``
    of ``stream``; row ``2i + 1`` is its exact negation.
    """
    L = np.ascontiguousarray(chol, dtype=float)
    if m < 2 or m % 2:
        raise DomainError(f"number of draws must be even and >= 2, got {m}")
    d = L.shape[0]
    z = stream.normals((m // 2) * d).reshape(m // 2, d)
    rows = np.empty((m, d))
    K.antithetic_rows(z, L, rows)
    rows.setflags(write=False)
    cov = as_cov(sigma) if sigma is not None else CovMatrix(L @ L.T)
    return DrawMatrix(rows=rows, source_cov=cov, source_seed=stream, chol=L)


def outer_normals(stream: SeededStream, first: int, count: int, d: int) -> np.ndarray:
    """Row ``i`` holds the first ``d`` normals of child stream ``first + i``."""
    out = np.empty((count, d))
    K.fill_normal_streams(np.uint64(stream.child_seed()), np.uint64(first), out)
    return out
