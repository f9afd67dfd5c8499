"""Chomsky-normal-form PCFGs: inside algorithm and MAP parsing.

Span charts hold preterminal distributions at width one and nonterminal
distributions elsewhere.  Binary expansions are split into four blocks by
the kinds of the two children (NN, NP, PN, PP); the NN block is applied at
every interior split of every span and therefore dominates the runtime, so
it alone takes a pluggable scoring backend.  The other three blocks fire
only at splits touching a width-one child and stay dense.  All four blocks
are normalized jointly per head symbol, so the head's expansion
probabilities across every child-kind combination sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hypergraph import DenseScore, LowRankScore, ScoreMatrix, join_tails
from .lowrank import MATERIALIZE_GUARD, FeatureMap, LowRankFactors
from .numeric import ScaledVector, as_matrix, as_vector

__all__ = [
    "PcfgModel",
    "ParseNode",
    "log_inside",
    "map_parse",
    "build_lpcfg",
]

_ROW_SUM_TOL = 1e-10
_JOINT_TOL = 1e-9


class PcfgModel:
    """Grammar parameters: start vector, four rule blocks, terminal table.

    Rule blocks map a head nonterminal to a flattened (left, right) child
    pair; the flatten convention is row-major, ``(b, c) -> b * n_right + c``.
    """

    def __init__(self, start, rules_nn: ScoreMatrix, rules_np: ScoreMatrix,
                 rules_pn: ScoreMatrix, rules_pp: ScoreMatrix, terminal):
        self.start = as_vector(start)
        self.rules_nn = rules_nn
        self.rules_np = rules_np
        self.rules_pn = rules_pn
        self.rules_pp = rules_pp
        self.terminal = as_matrix(terminal)

        nN = self.start.size
        nP = self.terminal.shape[0]
        expected = {
            "rules_nn": (nN, nN * nN),
            "rules_np": (nN, nN * nP),
            "rules_pn": (nN, nP * nN),
            "rules_pp": (nN, nP * nP),
        }
        for name, (rows, cols) in expected.items():
            block = getattr(self, name)
            if block.head_dim != rows or block.tail_dim != cols:
                raise ValueError(
                    f"{name} is {block.head_dim}x{block.tail_dim}, expected {rows}x{cols}"
                )
        if np.any(self.start < 0) or abs(self.start.sum() - 1.0) > _ROW_SUM_TOL:
            raise ValueError("start distribution must be nonnegative and sum to 1")
        if np.any(self.terminal < 0):
            raise ValueError("terminal probabilities must be nonnegative")
        if np.max(np.abs(self.terminal.sum(axis=1) - 1.0)) > _ROW_SUM_TOL:
            raise ValueError("terminal rows must sum to 1")
        joint = (self.rules_nn.row_masses() + self.rules_np.row_masses()
                 + self.rules_pn.row_masses() + self.rules_pp.row_masses())
        if np.max(np.abs(joint - 1.0)) > _JOINT_TOL:
            raise ValueError("rule blocks must jointly sum to 1 per head symbol")

    @property
    def n_nonterminals(self) -> int:
        return self.start.size

    @property
    def n_preterminals(self) -> int:
        return self.terminal.shape[0]

    @property
    def vocab(self) -> int:
        return self.terminal.shape[1]


def _check_sentence(m: PcfgModel, tokens) -> np.ndarray:
    toks = np.asarray(tokens)
    if toks.ndim != 1:
        raise ValueError("sentence must be a 1-D token array")
    if toks.size < 2:
        raise ValueError("sentences of length < 2 are underivable in this grammar form")
    if not np.issubdtype(toks.dtype, np.integer):
        if np.any(toks != np.floor(toks)):
            raise ValueError("tokens must be integers")
        toks = toks.astype(np.int64)
    if np.any(toks < 0) or np.any(toks >= m.vocab):
        bad = int(np.argmax((toks < 0) | (toks >= m.vocab)))
        raise ValueError(f"token {toks[bad]} at position {bad} is outside vocab {m.vocab}")
    return toks


def _block_for(m: PcfgModel, left_is_pre: bool, right_is_pre: bool) -> ScoreMatrix:
    if left_is_pre and right_is_pre:
        return m.rules_pp
    if left_is_pre:
        return m.rules_pn
    if right_is_pre:
        return m.rules_np
    return m.rules_nn


def log_inside(m: PcfgModel, tokens, split_order=None) -> float:
    """log p(sentence) summed over all parse trees.

    ``split_order`` optionally permutes the split points enumerated for
    each span; the result must not depend on it (the accumulation is a
    plain sum), and tests exercise that.
    """
    toks = _check_sentence(m, tokens)
    T = toks.size

    chart: dict[tuple[int, int], ScaledVector] = {}
    for i in range(T):
        chart[(i, i + 1)] = ScaledVector(m.terminal[:, toks[i]].copy(), 0.0)

    for width in range(2, T + 1):
        for i in range(T - width + 1):
            k = i + width
            splits = range(i + 1, k)
            if split_order is not None:
                splits = split_order(i, k, list(splits))
            acc: ScaledVector | None = None
            for j in splits:
                left, right = chart[(i, j)], chart[(j, k)]
                block = _block_for(m, j - i == 1, k - j == 1)
                beta = join_tails(left, right)
                term = ScaledVector(block.apply(beta.values), beta.log_scale)
                if acc is None:
                    acc = term
                else:
                    if term.log_scale < acc.log_scale:
                        acc, term = term, acc
                    acc = ScaledVector(
                        term.values + acc.values * math.exp(acc.log_scale - term.log_scale),
                        term.log_scale,
                    )
            chart[(i, k)] = acc.renormalize()

    root = chart[(0, T)]
    total = float(m.start @ root.values)
    if total == 0.0:
        return -math.inf
    return math.log(total) + root.log_scale


@dataclass(frozen=True)
class ParseNode:
    """Labeled span of a parse tree; leaves are preterminal spans."""

    label: int
    is_preterminal: bool
    start: int
    end: int
    children: tuple = ()

    def spans(self):
        yield (self.start, self.end, self.label, self.is_preterminal)
        for child in self.children:
            yield from child.spans()


def map_parse(m: PcfgModel, tokens, max_dense_entries: int = MATERIALIZE_GUARD):
    """Highest-probability labeled tree and its log score.

    Max-products need dense rule tables, so every block is materialized
    (the NN block subject to the entry guard).  Ties break toward the
    smaller split index, then smaller label ids.
    """
    toks = _check_sentence(m, tokens)
    T = toks.size
    nN, nP = m.n_nonterminals, m.n_preterminals

    with np.errstate(divide="ignore"):
        log_blocks = {
            (False, False): np.log(m.rules_nn.materialize(max_dense_entries)).reshape(nN, nN, nN),
            (False, True): np.log(m.rules_np.materialize()).reshape(nN, nN, nP),
            (True, False): np.log(m.rules_pn.materialize()).reshape(nN, nP, nN),
            (True, True): np.log(m.rules_pp.materialize()).reshape(nN, nP, nP),
        }
        log_terminal = np.log(m.terminal)
        log_start = np.log(m.start)

    best: dict[tuple[int, int], np.ndarray] = {}
    back: dict[tuple[int, int], np.ndarray] = {}
    for i in range(T):
        best[(i, i + 1)] = log_terminal[:, toks[i]].copy()

    for width in range(2, T + 1):
        for i in range(T - width + 1):
            k = i + width
            scores = np.full(nN, -np.inf)
            choices = np.zeros((nN, 3), dtype=np.int64)
            for j in range(i + 1, k):
                kinds = (j - i == 1, k - j == 1)
                table = log_blocks[kinds]
                cand = table + best[(i, j)][None, :, None] + best[(j, k)][None, None, :]
                flat = cand.reshape(nN, -1)
                idx = np.argmax(flat, axis=1)
                vals = flat[np.arange(nN), idx]
                improved = vals > scores
                scores = np.where(improved, vals, scores)
                n_right = table.shape[2]
                choices[improved] = np.stack(
                    [np.full(nN, j), idx // n_right, idx % n_right], axis=1
                )[improved]
            best[(i, k)] = scores
            back[(i, k)] = choices

    root_scores = log_start + best[(0, T)]
    root_label = int(np.argmax(root_scores))
    log_score = float(root_scores[root_label])

    def rebuild(i: int, k: int, label: int) -> ParseNode:
        if k - i == 1:
            return ParseNode(label, True, i, k)
        j, b, c = back[(i, k)][label]
        left = rebuild(i, int(j), int(b))
        right = rebuild(int(j), k, int(c))
        return ParseNode(label, False, i, k, (left, right))

    return rebuild(0, T, root_label), log_score


def build_lpcfg(head_embed, tail_embed, feature_map: FeatureMap,
                np_logits, pn_logits, pp_logits,
                start_logits, terminal_logits) -> PcfgModel:
    """Grammar with a factored NN block, jointly normalized per head.

    The NN block's unnormalized mass comes from the feature-mapped
    embeddings; the other blocks are exponentiated logits.  One normalizer
    per head divides all four blocks, computed without materializing the
    NN product.
    """
    u = feature_map.apply(head_embed)
    v = feature_map.apply(tail_embed)
    nN = u.shape[0]
    if v.shape[0] != nN * nN:
        raise ValueError(f"tail embeddings must cover all {nN * nN} nonterminal pairs")

    np_raw = np.exp(np.asarray(np_logits, dtype=np.float64).reshape(nN, -1))
    pn_raw = np.exp(np.asarray(pn_logits, dtype=np.float64).reshape(nN, -1))
    pp_raw = np.exp(np.asarray(pp_logits, dtype=np.float64).reshape(nN, -1))

    nn_mass = u @ np.sum(v, axis=0)
    mass = nn_mass + np_raw.sum(axis=1) + pn_raw.sum(axis=1) + pp_raw.sum(axis=1)
    if np.any(mass <= 0) or not np.all(np.isfinite(mass)):
        raise ValueError("degenerate head normalizer")

    factors = LowRankFactors(u, v, 1.0 / mass, "head")
    start = _softmax(as_vector(start_logits))
    terminal = np.apply_along_axis(_softmax, 1, as_matrix(terminal_logits))
    return PcfgModel(
        start=start,
        rules_nn=LowRankScore(factors),
        rules_np=DenseScore(np_raw / mass[:, None]),
        rules_pn=DenseScore(pn_raw / mass[:, None]),
        rules_pp=DenseScore(pp_raw / mass[:, None]),
        terminal=terminal,
    )


def _softmax(v: np.ndarray) -> np.ndarray:
    shifted = np.exp(v - np.max(v))
    return shifted / shifted.sum()
