"""Labeled directed hypergraphs and marginalization over them.

A hypergraph edge has one head node and one or two tail nodes; each edge
carries a scoring matrix mapping the joined tail label vector to head
labels.  Marginalization walks the edges in topological order, maintaining
one accumulator vector per node:

    beta  = outer(alpha[tail1], alpha[tail2]).ravel()   (join)
    alpha[head] += score @ beta                         (accumulate)

Edges sharing a head sum their contributions.  Accumulators are
:class:`~lrinfer.numeric.ScaledVector` instances and are renormalized after
every edge, so chains of ~1000 steps stay inside float64 range while the
arithmetic itself remains the plain sum-product algebra required by the
low-rank backend.

Backends: dense (O(L^{|e|+1}) per edge), low-rank ``U (V^T beta)``
(O(L^{|e|} N + L N)), and banded-plus-low-rank (O(L N), square edges only).
The max semiring is available for dense scores only: max does not
distribute over the inner sum of a factored product, so no low-rank
shortcut exists (``max_semiring_counterexample`` ships a concrete witness).
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .lowrank import (
    MATERIALIZE_GUARD,
    BandedLowRankFactors,
    LowRankFactors,
    _guard_entries,
)
from .numeric import ScaledVector, as_matrix, as_vector

__all__ = [
    "SemiringBackendError",
    "ScoreMatrix",
    "DenseScore",
    "LowRankScore",
    "BandedLowRankScore",
    "Hyperedge",
    "Hypergraph",
    "join_tails",
    "apply_score",
    "marginalize",
    "max_semiring_counterexample",
]

SUM = "sum"
MAX = "max"


class SemiringBackendError(Exception):
    """A scoring backend does not support the requested semiring."""


class ScoreMatrix(ABC):
    """Scoring matrix mapping a joined tail vector to head labels.

    All backends implement the same contract; results agree with the dense
    materialization of the encoded matrix.  ``head_scale`` is an optional
    per-row multiplicative constant (normalizers, clamped potentials such
    as emission probabilities) applied on top of the base parameters.
    """

    head_scale: np.ndarray | None

    @property
    @abstractmethod
    def head_dim(self) -> int: ...

    @property
    @abstractmethod
    def tail_dim(self) -> int: ...

    @abstractmethod
    def _apply_base(self, beta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _apply_base_transpose(self, v: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _materialize_base(self, max_entries: int) -> np.ndarray: ...

    def apply(self, beta) -> np.ndarray:
        """``Psi @ beta`` in linear space."""
        vec = as_vector(beta)
        if vec.size != self.tail_dim:
            raise ValueError(f"apply: expected length {self.tail_dim}, got {vec.size}")
        out = self._apply_base(vec)
        if self.head_scale is not None:
            out = out * self.head_scale
        return out

    def apply_transpose(self, v) -> np.ndarray:
        """``Psi.T @ v`` (used by forward passes)."""
        vec = as_vector(v)
        if vec.size != self.head_dim:
            raise ValueError(f"apply_transpose: expected length {self.head_dim}, got {vec.size}")
        if self.head_scale is not None:
            vec = vec * self.head_scale
        return self._apply_base_transpose(vec)

    def apply_block(self, betas) -> np.ndarray:
        """``Psi @ B`` for a (tail_dim, k) matrix of joined tail columns.

        Identical to applying each column separately; backends override
        with one matrix product so batched inference gets dense-kernel
        throughput.
        """
        block = np.asarray(betas, dtype=np.float64)
        if block.ndim != 2 or block.shape[0] != self.tail_dim:
            raise ValueError(f"apply_block: expected ({self.tail_dim}, k), got {block.shape}")
        out = self._apply_block_base(block)
        if self.head_scale is not None:
            out = out * self.head_scale[:, None]
        return out

    def _apply_block_base(self, block: np.ndarray) -> np.ndarray:
        return np.stack([self._apply_base(block[:, j]) for j in range(block.shape[1])], axis=1)

    def apply_max(self, beta) -> np.ndarray:
        """``max_j Psi[i, j] * beta[j]`` per head label; dense only."""
        raise SemiringBackendError(
            f"{type(self).__name__} does not support the max semiring: the "
            f"factored product cannot exchange max with its inner sum; "
            f"materialize to a dense backend first"
        )

    def materialize(self, max_entries: int = MATERIALIZE_GUARD) -> np.ndarray:
        dense = self._materialize_base(max_entries)
        if self.head_scale is not None:
            dense = dense * self.head_scale[:, None]
        return dense

    def row(self, i: int) -> np.ndarray:
        """Single head row of the encoded matrix (cheap for all backends)."""
        e = np.zeros(self.head_dim)
        e[i] = 1.0
        return self.apply_transpose(e)

    def row_masses(self) -> np.ndarray:
        """Row sums of the encoded matrix, computed without materializing."""
        return self.apply(np.ones(self.tail_dim))

    def with_head_scale(self, scale) -> "ScoreMatrix":
        """Same scores with an extra per-head-row constant multiplied in."""
        vec = as_vector(scale)
        if vec.size != self.head_dim:
            raise ValueError(f"head scale length {vec.size}, expected {self.head_dim}")
        combined = vec if self.head_scale is None else self.head_scale * vec
        return self._replace_scale(combined)

    @abstractmethod
    def _replace_scale(self, scale: np.ndarray) -> "ScoreMatrix": ...


class DenseScore(ScoreMatrix):
    """Explicit (head_dim, tail_dim) score matrix."""

    def __init__(self, matrix, head_scale=None):
        self.matrix = as_matrix(matrix)
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("dense scores must be finite")
        self.head_scale = None if head_scale is None else as_vector(head_scale)

    @property
    def head_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def tail_dim(self) -> int:
        return self.matrix.shape[1]

    def _apply_base(self, beta):
        return self.matrix @ beta

    def _apply_block_base(self, block):
        return self.matrix @ block

    def _apply_base_transpose(self, v):
        return self.matrix.T @ v

    def apply_max(self, beta):
        vec = as_vector(beta)
        if vec.size != self.tail_dim:
            raise ValueError(f"apply_max: expected length {self.tail_dim}, got {vec.size}")
        out = np.max(self.matrix * vec[None, :], axis=1)
        if self.head_scale is not None:
            out = out * self.head_scale
        return out

    def _materialize_base(self, max_entries):
        _guard_entries(self.matrix.size, max_entries)
        return self.matrix.copy()

    def _replace_scale(self, scale):
        out = DenseScore.__new__(DenseScore)
        out.matrix = self.matrix
        out.head_scale = scale
        return out


class LowRankScore(ScoreMatrix):
    """Factored score matrix applied as ``U (V^T beta)``.

    The constant vector ``c`` is folded into its side once at construction;
    applies are then two thin matvecs with no per-call copies.
    """

    def __init__(self, factors: LowRankFactors, head_scale=None):
        self.factors = factors
        self._u = factors.effective_u()
        self._v = factors.effective_v()
        self.head_scale = None if head_scale is None else as_vector(head_scale)

    @property
    def head_dim(self) -> int:
        return self.factors.head_dim

    @property
    def tail_dim(self) -> int:
        return self.factors.tail_dim

    def _apply_base(self, beta):
        return self._u @ (self._v.T @ beta)

    def _apply_block_base(self, block):
        return self._u @ (self._v.T @ block)

    def _apply_base_transpose(self, v):
        return self._v @ (self._u.T @ v)

    def _materialize_base(self, max_entries):
        _guard_entries(self._u.shape[0] * self._v.shape[0], max_entries)
        return self._u @ self._v.T

    def _replace_scale(self, scale):
        return LowRankScore(self.factors, scale)


class BandedLowRankScore(ScoreMatrix):
    """Square banded-plus-low-rank scores: ``(theta beta + U (V^T beta)) / Z``."""

    def __init__(self, factors: BandedLowRankFactors, head_scale=None):
        self.factors = factors
        self._u = factors.low_rank.effective_u()
        self._v = factors.low_rank.effective_v()
        self.head_scale = None if head_scale is None else as_vector(head_scale)

    @property
    def head_dim(self) -> int:
        return self.factors.size

    @property
    def tail_dim(self) -> int:
        return self.factors.size

    def _apply_base(self, beta):
        f = self.factors
        out = f.theta.matvec(beta) + self._u @ (self._v.T @ beta)
        return out / f.Z

    def _apply_block_base(self, block):
        f = self.factors
        out = f.theta.matvec(block) + self._u @ (self._v.T @ block)
        return out / f.Z[:, None]

    def _apply_base_transpose(self, v):
        f = self.factors
        scaled = v / f.Z
        return f.theta.rmatvec(scaled) + self._v @ (self._u.T @ scaled)

    def _materialize_base(self, max_entries):
        from .lowrank import materialize as materialize_factors

        return materialize_factors(self.factors, max_entries)

    def _replace_scale(self, scale):
        return BandedLowRankScore(self.factors, scale)


@dataclass(frozen=True)
class Hyperedge:
    """One head node, a tuple of 1 or 2 tail nodes, and the edge scores."""

    head: int
    tails: tuple[int, ...]
    score: ScoreMatrix

    def __post_init__(self):
        object.__setattr__(self, "tails", tuple(self.tails))
        if len(self.tails) not in (1, 2):
            raise ValueError("hyperedges take 1 or 2 tail nodes")


class Hypergraph:
    """Acyclic hypergraph with a fixed topological edge order.

    ``label_sizes[v]`` is the number of labels of node ``v``; ``root`` is
    the designated output node.  Construction validates that the edge list
    is a topological order: every tail is either a leaf (never a head) or a
    node whose head edges have all appeared earlier, and no node is used as
    a tail before its last incoming edge.
    """

    def __init__(self, label_sizes: Sequence[int], root: int, edges: Sequence[Hyperedge]):
        self.label_sizes = [int(s) for s in label_sizes]
        self.root = int(root)
        self.edges = list(edges)
        n = len(self.label_sizes)
        if any(s < 1 for s in self.label_sizes):
            raise ValueError("every node needs at least one label")
        if not (0 <= self.root < n):
            raise ValueError("root is not a node")

        heads = {e.head for e in self.edges}
        self.leaf_nodes = frozenset(v for v in range(n) if v not in heads)

        last_head = {}
        for i, e in enumerate(self.edges):
            if not (0 <= e.head < n) or any(not (0 <= t < n) for t in e.tails):
                raise ValueError("edge references an unknown node")
            last_head[e.head] = i
        for i, e in enumerate(self.edges):
            for t in e.tails:
                if t in heads and last_head[t] >= i:
                    raise ValueError(
                        f"edge {i}: tail node {t} is used before all of its "
                        f"incoming edges have been processed (non-topological order)"
                    )
            expected_tail = math.prod(self.label_sizes[t] for t in e.tails)
            if e.score.head_dim != self.label_sizes[e.head]:
                raise ValueError(
                    f"edge {i}: score rows {e.score.head_dim} != head labels "
                    f"{self.label_sizes[e.head]}"
                )
            if e.score.tail_dim != expected_tail:
                raise ValueError(
                    f"edge {i}: score cols {e.score.tail_dim} != joined tail "
                    f"size {expected_tail}"
                )
        if self.edges and self.root not in heads:
            raise ValueError("root has no incoming edges")

    @property
    def n_nodes(self) -> int:
        return len(self.label_sizes)


def join_tails(alpha1: ScaledVector, alpha2: ScaledVector | None = None) -> ScaledVector:
    """Joined tail vector: flattened outer product, log scales summed.

    Index convention for a pair is ``(z1, z2) -> z1 * L2 + z2`` (row-major
    flatten).  A single tail passes through unchanged.
    """
    if alpha2 is None:
        return alpha1
    return ScaledVector(
        np.outer(alpha1.values, alpha2.values).ravel(),
        alpha1.log_scale + alpha2.log_scale,
    )


def apply_score(score: ScoreMatrix, beta: ScaledVector, semiring: str = SUM) -> ScaledVector:
    """Push a joined tail vector through an edge's scoring matrix."""
    if semiring == SUM:
        return ScaledVector(score.apply(beta.values), beta.log_scale)
    if semiring == MAX:
        return ScaledVector(score.apply_max(beta.values), beta.log_scale)
    raise ValueError(f"unknown semiring: {semiring!r}")


def _accumulate(acc: ScaledVector | None, term: ScaledVector, semiring: str) -> ScaledVector:
    if acc is None or acc.is_zero():
        return term
    if term.is_zero():
        return acc
    # Align log scales before combining; rescaling the larger-scaled side
    # would lose precision, so the smaller side is brought up instead.
    if term.log_scale < acc.log_scale:
        acc, term = term, acc
    shift = math.exp(acc.log_scale - term.log_scale)
    if semiring == SUM:
        vals = term.values + acc.values * shift
    else:
        vals = np.maximum(term.values, acc.values * shift)
    return ScaledVector(vals, term.log_scale)


def marginalize(
    g: Hypergraph,
    leaf_init: Mapping[int, ScaledVector] | None = None,
    semiring: str = SUM,
) -> float:
    """Log evidence: log of the summed (or maxed) root accumulator.

    Leaves default to all-ones vectors; ``leaf_init`` overrides individual
    leaves.  Under ``semiring="max"`` every edge must carry a dense backend.
    """
    if semiring not in (SUM, MAX):
        raise ValueError(f"unknown semiring: {semiring!r}")
    if semiring == MAX:
        for i, e in enumerate(g.edges):
            if not isinstance(e.score, DenseScore):
                raise SemiringBackendError(
                    f"edge {i} uses {type(e.score).__name__}; the max semiring "
                    f"requires dense scores"
                )

    alpha: dict[int, ScaledVector | None] = {}
    for v in g.leaf_nodes:
        alpha[v] = ScaledVector.ones(g.label_sizes[v])
    if leaf_init:
        for v, vec in leaf_init.items():
            if v not in g.leaf_nodes:
                raise ValueError(f"node {v} is not a leaf")
            if vec.size != g.label_sizes[v]:
                raise ValueError(f"leaf {v}: init size {vec.size} != {g.label_sizes[v]}")
            alpha[v] = vec

    for e in g.edges:
        tail_vecs = [alpha[t] for t in e.tails]
        beta = join_tails(*tail_vecs)
        term = apply_score(e.score, beta, semiring)
        alpha[e.head] = _accumulate(alpha.get(e.head), term, semiring).renormalize()

    root = alpha[g.root]
    return root.log_total() if semiring == SUM else root.log_peak()


def max_semiring_counterexample() -> dict:
    """Fixed 2x2 witness that max does not commute with the factor sum.

    For ``A[z, n] = U[z, n] * V[z, n] * beta[z]`` the quantities
    ``max_z sum_n A[z, n]`` and ``sum_n max_z A[z, n]`` differ, which is why
    the factored backends refuse the max semiring.
    """
    u = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    beta = np.array([1.0, 1.0])
    a = u * v * beta[:, None]
    return {
        "U": u,
        "V": v,
        "beta": beta,
        "max_of_sum": float(np.max(np.sum(a, axis=1))),
        "sum_of_max": float(np.sum(np.max(a, axis=0))),
    }
