"""Candidate norms: lp norms (including the max norm) and sum-of-squares norms.

The sum-of-squares norm ``ssq:k`` is the square root of the sum of the ``k``
largest squared coordinates. It equals the max norm at ``k = 1`` and the
Euclidean norm at ``k = d``; both identities are exact here because those two
cases are evaluated by the max-norm and Euclidean code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, InvalidNorm

# the kernels switch to max-factored evaluation from this exponent on
_BIG_P = 8.0


@dataclass(frozen=True)
class NormSpec:
    """A member of the candidate family.

    Parameters
    ----------
    kind : {"lp", "ssq"}
    p : float
        Exponent in [1, inf] for ``kind == "lp"``.
    k : int
        Number of largest squares for ``kind == "ssq"``.
    """

    kind: str
    p: float = 2.0
    k: int = 0

    def __post_init__(self):
        if self.kind == "lp":
            p = float(self.p)
            if not p >= 1.0:
                raise InvalidNorm(f"lp norms need p >= 1, got {self.p}")
            object.__setattr__(self, "p", p)
            object.__setattr__(self, "k", 0)
        elif self.kind == "ssq":
            if int(self.k) != self.k or self.k < 1:
                raise InvalidNorm(f"sum-of-squares norms need an integer k >= 1, got {self.k}")
            object.__setattr__(self, "k", int(self.k))
            object.__setattr__(self, "p", 2.0)
        else:
            raise InvalidNorm(f"unknown norm kind {self.kind!r}")

    @classmethod
    def lp(cls, p: float) -> "NormSpec":
        return cls("lp", p=p)

    @classmethod
    def ssq(cls, k: int) -> "NormSpec":
        return cls("ssq", k=k)

    @property
    def name(self) -> str:
        if self.kind == "ssq":
            return f"ssq:{self.k}"
        if math.isinf(self.p):
            return "linf"
        return f"l{self.p:g}"

    def __str__(self):
        return self.name

    def check_dim(self, d: int) -> None:
        if self.kind == "ssq" and self.k > d:
            raise DimensionMismatch(f"ssq:{self.k} needs dimension >= {self.k}, got {d}")

    def kernel(self, d: int) -> tuple[int, float, int]:
        """``(code, p, k)`` for the compiled kernels at dimension ``d``."""
        self.check_dim(d)
        if self.kind == "ssq":
            if self.k == 1:
                return K.K_LINF, math.inf, 1
            if self.k == d:
                return K.K_L2, 2.0, 1
            code = K.K_SSQ_SMALL if d <= K.SSQ_SMALL_MAX_D else K.K_SSQ
            return code, 2.0, self.k
        p = self.p
        if math.isinf(p):
            return K.K_LINF, math.inf, 1
        fixed = {1.0: K.K_L1, 2.0: K.K_L2, 4.0: K.K_L4, 6.0: K.K_L6}
        if p in fixed:
            return fixed[p], p, 1
        if p >= _BIG_P:
            return K.K_LBIG, p, 1
        return K.K_LP, p, 1


def parse_norm(text: str) -> NormSpec:
    """Parse a norm name: ``l1``, ``l2``, ``l4``, ``l6``, ``linf``, ``l<p>`` or ``ssq:<k>``."""
    s = text.strip().lower()
    if s.startswith("ssq:"):
        try:
            k = int(s[4:])
        except ValueError:
            raise InvalidNorm(f"bad sum-of-squares norm {text!r}") from None
        return NormSpec.ssq(k)
    if s in ("linf", "l_inf", "max"):
        return NormSpec.lp(math.inf)
    if s.startswith("l"):
        try:
            p = float(s[1:])
        except ValueError:
            raise InvalidNorm(f"unknown norm {text!r}") from None
        return NormSpec.lp(p)
    raise InvalidNorm(f"unknown norm {text!r}")


def parse_family(text: str, d: int) -> list[NormSpec]:
    """``lp``, ``ssq`` or a comma-separated list of norm names."""
    s = text.strip().lower()
    if s in ("lp", "ssq"):
        return default_family(s, d)
    return [parse_norm(part) for part in s.split(",") if part.strip()]


def transformed_values(spec: NormSpec, rows: np.ndarray) -> np.ndarray:
    """Kernel ``t``-space values of every row (monotone in the norm)."""
    rows = np.ascontiguousarray(rows, dtype=float)
    code, p, k = spec.kernel(rows.shape[1])
    out = np.empty(rows.shape[0])
    K.rows_t(code, p, k, rows, out)
    return out


def to_norm(spec: NormSpec, d: int, t):
    code, p, _ = spec.kernel(d)
    if np.ndim(t) == 0:
        return float(K.t_to_norm(code, p, float(t)))
    return np.array([K.t_to_norm(code, p, float(v)) for v in np.ravel(t)])


def evaluate(spec: NormSpec, x) -> float:
    """Value of the norm at the finite vector ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise DimensionMismatch("evaluate expects a single vector")
    if not np.all(np.isfinite(x)):
        raise InvalidNorm("norms are evaluated on finite vectors only")
    return float(evaluate_rows(spec, x[None, :])[0])


def evaluate_rows(spec: NormSpec, rows) -> np.ndarray:
    """Norm of every row, max-factored so powers never over- or underflow."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    scale = np.abs(rows).max(axis=1) if rows.shape[1] else np.zeros(rows.shape[0])
    safe = np.where(scale > 0.0, scale, 1.0)
    unit = rows / safe[:, None]
    return safe * to_norm(spec, rows.shape[1], transformed_values(spec, unit))


_SSQ_GRIDS = {
    10: (1, 3, 5, 6, 8, 10),
    50: (1, 11, 21, 30, 40, 50),
    100: (1, 21, 41, 60, 80, 100),
}


def ssq_grid(d: int) -> list[int]:
    if d in _SSQ_GRIDS:
        return list(_SSQ_GRIDS[d])
    ks = [int(math.floor(v + 0.5)) for v in np.linspace(1, d, 6)]
    return sorted(set(ks))


def default_family(kind: str, d: int) -> list[NormSpec]:
    """The standard families: ``lp`` (p = 1, 2, 4, 6, inf) or ``ssq`` (a k grid)."""
    if d < 1:
        raise DimensionMismatch(f"dimension must be >= 1, got {d}")
    if kind == "lp":
        return [NormSpec.lp(p) for p in (1, 2, 4, 6, math.inf)]
    if kind == "ssq":
        return [NormSpec.ssq(k) for k in ssq_grid(d)]
    raise InvalidNorm(f"unknown family {kind!r}")
