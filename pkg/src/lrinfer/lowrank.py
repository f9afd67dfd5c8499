"""Nonnegative low-rank factor construction and the banded extension.

A scoring matrix constrained to ``U @ V.T`` with inner dimension N admits a
fast matrix-vector product ``U @ (V.T @ beta)``.  Factors are produced by
applying an elementwise-positive feature map to embedding rows, which keeps
every entry nonnegative and therefore usable as (unnormalized) probability
mass.  Row normalizers are computed without ever materializing the product:

    row_mass = U @ (V.T @ ones)        # O(L^{|e|} N + L N)

The banded extension adds a square banded parameter matrix ``theta`` on top
of the low-rank part; the matrix-vector product against the band costs
O(L * width), so inference stays subquadratic while the combined matrix can
reach full rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import as_matrix, as_vector

__all__ = [
    "EXP_LINEAR",
    "EXP_LINEAR_NORMSQ",
    "FeatureMap",
    "LowRankFactors",
    "BandMatrix",
    "BandedLowRankFactors",
    "MaterializeLimitError",
    "build_factors",
    "build_banded",
    "materialize",
    "init_orthogonal",
]

EXP_LINEAR = "exp_linear"
EXP_LINEAR_NORMSQ = "exp_linear_normsq"

# Exponent clamp: an upper bound keeps exp() finite, the lower bound keeps it
# strictly positive (above the smallest normal double) for pathological
# embeddings.
EXP_CLAMP_HI = 40.0
EXP_CLAMP_LO = -700.0

# Dense materialization refuses above this many entries.
MATERIALIZE_GUARD = 10**8


class MaterializeLimitError(Exception):
    """Raised when a dense materialization would exceed the entry budget."""


def _guard_entries(n_entries: int, max_entries: int) -> None:
    if n_entries > max_entries:
        raise MaterializeLimitError(
            f"dense materialization of {n_entries} entries exceeds the "
            f"limit of {max_entries}; raise the limit explicitly if this "
            f"is intentional"
        )


@dataclass(frozen=True)
class FeatureMap:
    """Elementwise-positive map from embeddings to N-dim feature rows.

    ``EXP_LINEAR`` computes ``exp(W x)``; ``EXP_LINEAR_NORMSQ`` computes
    ``exp(W x - ||x||^2 / 2)``.  The exponent is clamped to
    [EXP_CLAMP_LO, EXP_CLAMP_HI] so the output is strictly positive and
    finite for any finite input.
    """

    kind: str
    W: np.ndarray

    def __post_init__(self):
        if self.kind not in (EXP_LINEAR, EXP_LINEAR_NORMSQ):
            raise ValueError(f"unknown feature map kind: {self.kind!r}")
        object.__setattr__(self, "W", as_matrix(self.W))
        if not np.all(np.isfinite(self.W)):
            raise ValueError("feature map projection must be finite")

    @property
    def n_features(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def apply(self, embeddings) -> np.ndarray:
        """Map embedding rows (n, D) to strictly positive features (n, N)."""
        x = as_matrix(embeddings)
        if x.shape[1] != self.input_dim:
            raise ValueError(
                f"embedding dim {x.shape[1]} does not match projection dim {self.input_dim}"
            )
        arg = x @ self.W.T
        if self.kind == EXP_LINEAR_NORMSQ:
            arg = arg - 0.5 * np.sum(x * x, axis=1, keepdims=True)
        return np.exp(np.clip(arg, EXP_CLAMP_LO, EXP_CLAMP_HI))


HEAD = "head"
TAIL = "tail"


@dataclass(frozen=True)
class LowRankFactors:
    """Nonnegative factor pair with a fused constant vector ``c``.

    ``U`` is (L, N), ``V`` is (L_tail, N); the encoded matrix is
    ``diag(c) @ U @ V.T`` when ``c_side == "head"`` (c holds row
    normalizers) or ``U @ V.T @ diag(c)`` when ``c_side == "tail"``
    (c holds clamped potentials on tail columns).
    """

    U: np.ndarray
    V: np.ndarray
    c: np.ndarray
    c_side: str = HEAD

    def __post_init__(self):
        u = as_matrix(self.U)
        v = as_matrix(self.V)
        object.__setattr__(self, "U", u)
        object.__setattr__(self, "V", v)
        object.__setattr__(self, "c", as_vector(self.c))
        if u.shape[1] != v.shape[1]:
            raise ValueError(f"feature dims differ: U {u.shape}, V {v.shape}")
        if np.any(u < 0) or np.any(v < 0):
            raise ValueError("low-rank factors must be nonnegative")
        if np.any(self.c < 0):
            raise ValueError("constants c must be nonnegative")
        if self.c_side not in (HEAD, TAIL):
            raise ValueError(f"c_side must be 'head' or 'tail', got {self.c_side!r}")
        expected = u.shape[0] if self.c_side == HEAD else v.shape[0]
        if self.c.size != expected:
            raise ValueError(f"c has length {self.c.size}, expected {expected}")

    @classmethod
    def from_probability_factors(cls, U, V) -> "LowRankFactors":
        """Directly supplied factors whose product is already normalized."""
        u = as_matrix(U)
        return cls(u, V, np.ones(u.shape[0]), HEAD)

    @property
    def n_features(self) -> int:
        return self.U.shape[1]

    @property
    def head_dim(self) -> int:
        return self.U.shape[0]

    @property
    def tail_dim(self) -> int:
        return self.V.shape[0]

    def effective_u(self) -> np.ndarray:
        """U with a head-side c folded in (V-side c leaves U untouched)."""
        if self.c_side == HEAD:
            return self.U * self.c[:, None]
        return self.U

    def effective_v(self) -> np.ndarray:
        if self.c_side == TAIL:
            return self.V * self.c[:, None]
        return self.V


@dataclass(frozen=True)
class BandMatrix:
    """Square banded matrix stored by diagonals.

    ``data[i, half_width + d]`` holds entry (i, i + d) for |d| <= half_width;
    positions outside the matrix are zero.  Matrix-vector products cost
    O(L * width).
    """

    half_width: int
    data: np.ndarray  # (L, 2 * half_width + 1)

    def __post_init__(self):
        object.__setattr__(self, "data", as_matrix(self.data))
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")
        if self.data.shape[1] != 2 * self.half_width + 1:
            raise ValueError(
                f"band data has {self.data.shape[1]} diagonals, "
                f"expected {2 * self.half_width + 1}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("band entries must be finite")
        # Corner positions refer outside the matrix and must stay zero.
        n = self.size
        h = self.half_width
        for d in range(-h, h + 1):
            col = self.data[:, h + d]
            if d > 0 and np.any(col[n - d:] != 0):
                raise ValueError("band data nonzero outside the matrix")
            if d < 0 and np.any(col[:-d] != 0):
                raise ValueError("band data nonzero outside the matrix")

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, n: int, half_width: int) -> "BandMatrix":
        return cls(half_width, np.zeros((n, 2 * half_width + 1)))

    @classmethod
    def from_dense(cls, dense, half_width: int) -> "BandMatrix":
        mat = as_matrix(dense)
        n = mat.shape[0]
        if mat.shape != (n, n):
            raise ValueError("band source must be square")
        h = half_width
        data = np.zeros((n, 2 * h + 1))
        for d in range(-h, h + 1):
            lo, hi = max(0, -d), min(n, n - d)
            idx = np.arange(lo, hi)
            data[lo:hi, h + d] = mat[idx, idx + d]
        off_band = mat.copy()
        for d in range(-h, h + 1):
            lo, hi = max(0, -d), min(n, n - d)
            idx = np.arange(lo, hi)
            off_band[idx, idx + d] = 0.0
        if np.any(off_band != 0):
            raise ValueError("dense source has mass outside the band")
        return cls(h, data)

    def to_dense(self) -> np.ndarray:
        n, h = self.size, self.half_width
        out = np.zeros((n, n))
        for d in range(-h, h + 1):
            lo, hi = max(0, -d), min(n, n - d)
            idx = np.arange(lo, hi)
            out[idx, idx + d] = self.data[lo:hi, h + d]
        return out

    def row_sums(self) -> np.ndarray:
        return np.sum(self.data, axis=1)

    def matvec(self, v) -> np.ndarray:
        """``theta @ v`` in O(L * width); v may be a matrix of columns."""
        vec = np.asarray(v, dtype=np.float64)
        n, h = self.size, self.half_width
        if vec.shape[0] != n:
            raise ValueError(f"band matvec size mismatch: {n} vs {vec.shape[0]}")
        out = np.zeros(vec.shape)
        for d in range(-h, h + 1):
            lo, hi = max(0, -d), min(n, n - d)
            if lo < hi:
                diag = self.data[lo:hi, h + d]
                if vec.ndim == 2:
                    diag = diag[:, None]
                out[lo:hi] += diag * vec[lo + d:hi + d]
        return out

    def rmatvec(self, v) -> np.ndarray:
        """``theta.T @ v`` in O(L * width)."""
        vec = as_vector(v)
        n, h = self.size, self.half_width
        if vec.size != n:
            raise ValueError(f"band rmatvec size mismatch: {n} vs {vec.size}")
        out = np.zeros(n)
        for d in range(-h, h + 1):
            lo, hi = max(0, -d), min(n, n - d)
            if lo < hi:
                out[lo + d:hi + d] += self.data[lo:hi, h + d] * vec[lo:hi]
        return out


@dataclass(frozen=True)
class BandedLowRankFactors:
    """Banded-plus-low-rank parameterization of a square stochastic matrix.

    Encodes ``(theta + U @ V.T) / Z`` rowwise, where ``theta`` is banded with
    half-width at most ``n_features // 2`` and ``Z`` holds the per-row
    normalizers.
    """

    low_rank: LowRankFactors
    theta: BandMatrix
    Z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Z", as_vector(self.Z))
        lr = self.low_rank
        if lr.head_dim != lr.tail_dim:
            raise ValueError("banded extension requires a square low-rank part")
        if self.theta.size != lr.head_dim:
            raise ValueError("band size does not match factor dimension")
        if self.theta.half_width > lr.n_features // 2:
            raise ValueError(
                f"band half-width {self.theta.half_width} exceeds "
                f"n_features/2 = {lr.n_features // 2}"
            )
        if np.any(self.theta.data < 0):
            raise ValueError("band parameters must be nonnegative")
        if self.Z.size != lr.head_dim:
            raise ValueError("Z length does not match dimension")
        if np.any(self.Z <= 0):
            raise ValueError("row normalizers must be strictly positive")

    @property
    def size(self) -> int:
        return self.low_rank.head_dim

    @property
    def n_features(self) -> int:
        return self.low_rank.n_features


def build_factors(head_embed, tail_embed, feature_map: FeatureMap) -> LowRankFactors:
    """Row-stochastic low-rank factors from embeddings.

    Applies the feature map to both embedding tables and computes the per-row
    normalizer ``c = 1 / (U @ (V.T @ ones))`` without materializing the
    product.
    """
    u = feature_map.apply(head_embed)
    v = feature_map.apply(tail_embed)
    row_mass = u @ np.sum(v, axis=0)
    if np.any(row_mass <= 0) or not np.all(np.isfinite(row_mass)):
        raise ValueError("degenerate row normalizer; factors must be strictly positive")
    return LowRankFactors(u, v, 1.0 / row_mass, HEAD)


def build_banded(low_rank: LowRankFactors, theta: BandMatrix) -> BandedLowRankFactors:
    """Attach a banded component and compute row normalizers in O(L N).

    ``Z_row = sum of the band segment + u_row . (sum of all v rows)``; the
    result encodes the row-stochastic matrix ``(theta + U V^T) / Z``.
    Any constants already fused into the factors are folded in first.
    """
    if np.any(theta.data < 0):
        raise ValueError("band parameters must be nonnegative")
    folded = LowRankFactors(
        low_rank.effective_u(),
        low_rank.effective_v(),
        np.ones(low_rank.head_dim),
        HEAD,
    )
    z = theta.row_sums() + folded.U @ np.sum(folded.V, axis=0)
    return BandedLowRankFactors(folded, theta, z)


def materialize(factors, max_entries: int = MATERIALIZE_GUARD) -> np.ndarray:
    """Exact dense matrix for a factor bundle, normalization included."""
    if isinstance(factors, BandedLowRankFactors):
        _guard_entries(factors.size * factors.size, max_entries)
        lr = factors.low_rank
        dense = factors.theta.to_dense() + lr.effective_u() @ lr.effective_v().T
        return dense / factors.Z[:, None]
    if isinstance(factors, LowRankFactors):
        _guard_entries(factors.head_dim * factors.tail_dim, max_entries)
        return factors.effective_u() @ factors.effective_v().T
    raise TypeError(f"cannot materialize {type(factors).__name__}")


def init_orthogonal(n_features: int, dim: int, seed: int) -> np.ndarray:
    """Seeded (N, D) projection with orthonormal rows.

    When N <= D the rows are mutually orthonormal; when N > D the rows come
    in consecutive blocks of at most D orthonormal rows.
    """
    if n_features < 1 or dim < 1:
        raise ValueError("n_features and dim must be >= 1")
    rng = np.random.default_rng(seed)
    blocks = []
    remaining = n_features
    while remaining > 0:
        k = min(remaining, dim)
        gauss = rng.standard_normal((dim, dim))
        q, r = np.linalg.qr(gauss)
        # Fix signs so the decomposition (and hence the output) is unique.
        q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
        blocks.append(q.T[:k])
        remaining -= k
    return np.vstack(blocks)
