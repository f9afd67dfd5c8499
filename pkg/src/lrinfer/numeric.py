"""Dense linear algebra, scaled-probability arithmetic, and rank estimation.

All inference in this package runs in linear probability space: the fast
low-rank matrix-vector rewrite relies on multiplication distributing over
addition, which a log-space semiring would destroy.  Long chains therefore
need explicit underflow control, provided here by :class:`ScaledVector`:
a nonnegative vector stored alongside the natural log of a factor that has
been divided out.  Renormalization uses exact power-of-two scaling so the
stored values are never perturbed by rounding.

Matrices are plain float64 ``numpy`` arrays (row-major); there is no
wrapper type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScaledVector",
    "logsumexp",
    "matvec",
    "estimate_rank",
]

_LN2 = math.log(2.0)


def as_vector(v) -> np.ndarray:
    """Coerce to a 1-D float64 array without copying when possible."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ScaledVector:
    """Nonnegative vector ``values`` representing ``values * exp(log_scale)``.

    ``values`` must be finite and >= 0; ``log_scale`` is a finite scalar.
    The represented quantity is invariant under :meth:`renormalize`.
    """

    values: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        vals = as_vector(self.values)
        object.__setattr__(self, "values", vals)
        if vals.size == 0:
            raise ValueError("ScaledVector must be nonempty")
        if not np.all(np.isfinite(vals)):
            raise ValueError("ScaledVector values must be finite")
        if np.any(vals < 0):
            raise ValueError("ScaledVector values must be nonnegative")
        if not math.isfinite(self.log_scale):
            raise ValueError("ScaledVector log_scale must be finite")

    @classmethod
    def ones(cls, n: int) -> "ScaledVector":
        return cls(np.ones(n), 0.0)

    @classmethod
    def from_log(cls, log_values: np.ndarray) -> "ScaledVector":
        """Build from log-space entries (``-inf`` allowed, meaning zero)."""
        logs = as_vector(log_values)
        m = float(np.max(logs))
        if m == -math.inf:
            return cls(np.zeros(logs.size), 0.0)
        return cls(np.exp(logs - m), m)

    @property
    def size(self) -> int:
        return self.values.size

    def is_zero(self) -> bool:
        return not bool(np.any(self.values))

    def renormalize(self) -> "ScaledVector":
        """Rescale so ``max(values)`` lands in [0.5, 1.0].

        The scale factor is an exact power of two, so entries are rescaled
        without rounding error as long as they stay in the normal float
        range; entries more than ~300 orders of magnitude below the max
        degrade to subnormal precision (they are negligible in any sum).
        An all-zero vector is returned unchanged.
        """
        m = float(np.max(self.values))
        if m == 0.0:
            return self
        e = math.ceil(math.log2(m))
        if e == 0:
            return self
        return ScaledVector(self.values * math.ldexp(1.0, -e), self.log_scale + e * _LN2)

    def times(self, other: "ScaledVector") -> "ScaledVector":
        """Elementwise product; log scales add."""
        if other.size != self.size:
            raise ValueError(f"size mismatch: {self.size} vs {other.size}")
        return ScaledVector(self.values * other.values, self.log_scale + other.log_scale)

    def log_total(self) -> float:
        """``log(sum(values)) + log_scale``; ``-inf`` when all zero."""
        s = float(np.sum(self.values))
        if s == 0.0:
            return -math.inf
        return math.log(s) + self.log_scale

    def log_peak(self) -> float:
        """``log(max(values)) + log_scale``; ``-inf`` when all zero."""
        m = float(np.max(self.values))
        if m == 0.0:
            return -math.inf
        return math.log(m) + self.log_scale

    def log_entries(self) -> np.ndarray:
        """Per-entry logs (``-inf`` for zeros)."""
        with np.errstate(divide="ignore"):
            return np.log(self.values) + self.log_scale


def logsumexp(v) -> float:
    """``log(sum(exp(v)))`` with max-subtraction; ``-inf`` for all-``-inf``."""
    arr = as_vector(v)
    if arr.size == 0:
        raise ValueError("logsumexp of empty vector")
    m = float(np.max(arr))
    if m == -math.inf:
        return -math.inf
    if not math.isfinite(m):
        raise ValueError("logsumexp requires entries < +inf")
    return m + math.log(float(np.sum(np.exp(arr - m))))


def matvec(m, v) -> np.ndarray:
    """Standard matrix-vector product with an explicit shape check."""
    mat = as_matrix(m)
    vec = as_vector(v)
    if mat.shape[1] != vec.size:
        raise ValueError(f"matvec shape mismatch: {mat.shape} @ ({vec.size},)")
    return mat @ vec


def estimate_rank(m, threshold: float = 1e-5) -> int:
    """Number of singular values strictly greater than ``threshold``."""
    mat = as_matrix(m)
    if not np.all(np.isfinite(mat)):
        raise ValueError("estimate_rank requires finite entries")
    if mat.size == 0:
        return 0
    singular = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(singular > threshold))
