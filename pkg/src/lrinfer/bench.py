"""Synthetic instances and wall-clock comparison of scoring backends.

Every grid cell derives its own random stream from ``(seed, family, L, N)``
so results do not depend on execution order, builds one set of low-rank
parameters, and times each backend against identical inputs (the dense
backend is the exact materialization of the low-rank one, so per-token
log-likelihoods must agree).  Timing regions are pinned to one BLAS thread
to keep scaling slopes interpretable; cells whose dense parameters exceed
the byte budget are emitted as flagged records instead of failing the run.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import hmm as hmm_mod
from . import hsmm as hsmm_mod
from . import pcfg as pcfg_mod
from .hypergraph import BandedLowRankScore, DenseScore, LowRankScore
from .lowrank import (
    MATERIALIZE_GUARD,
    EXP_LINEAR,
    EXP_LINEAR_NORMSQ,
    BandMatrix,
    FeatureMap,
    LowRankFactors,
    build_banded,
    build_factors,
    init_orthogonal,
    materialize,
)
from .numeric import estimate_rank

__all__ = [
    "BenchConfig",
    "BenchRecord",
    "run_grid",
    "rank_report",
    "RankRow",
    "rank_table_csv",
    "frontier_csv",
    "make_hmm_pair",
    "make_banded_hmm_pair",
    "make_hsmm_pair",
    "make_pcfg_pair",
    "random_dense_hmm",
    "random_dense_pcfg",
]

_FAMILY_IDS = {"hmm": 1, "hsmm": 2, "pcfg": 3}

CSV_HEADER = ["family", "L", "N", "backend", "secs_per_batch", "ll_per_token", "flagged"]


@dataclass(frozen=True)
class BenchConfig:
    family: str
    L_grid: tuple
    ratio_grid: tuple = (8,)
    n_grid: tuple = ()  # absolute ranks, appended to the ratio-derived ones
    T: int = 32
    batch: int = 4
    repeats: int = 3
    warmup: int = 1
    seed: int = 0
    backends: tuple = ("dense", "lowrank")
    budget_bytes: int = 8 << 30
    vocab: int = 64
    frame_dim: int = 8
    max_duration: int = 4
    embed_dim: int = 16
    parallel: bool = False  # correctness sweeps only; serial for timing

    def __post_init__(self):
        if self.family not in _FAMILY_IDS:
            raise ValueError(f"unknown family {self.family!r}")
        if not self.L_grid or not (tuple(self.ratio_grid) + tuple(self.n_grid)):
            raise ValueError("grids must be nonempty")
        if self.repeats < 3:
            raise ValueError("repeats must be >= 3")


@dataclass
class BenchRecord:
    family: str
    L: int
    N: int
    backend: str
    seconds_per_batch: float
    ll_per_token: float
    peak_chart_bytes: int
    flagged: bool = False


def _cell_rng(cfg: BenchConfig, L: int, N: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, _FAMILY_IDS[cfg.family], L, N])


def _feature_map(kind: str, n: int, dim: int, rng) -> FeatureMap:
    w = init_orthogonal(n, dim, int(rng.integers(2**31)))
    return FeatureMap(kind, w)


def _transition_factors(L: int, N: int, dim: int, rng) -> LowRankFactors:
    fmap = _feature_map(EXP_LINEAR, N, dim, rng)
    head = rng.standard_normal((L, dim)) / np.sqrt(dim)
    tail = rng.standard_normal((L, dim)) / np.sqrt(dim)
    return build_factors(head, tail, fmap)


def make_hmm_pair(L: int, N: int, rng, vocab: int = 16, embed_dim: int = 16,
                  dense: bool = True, max_entries: int = MATERIALIZE_GUARD):
    """Low-rank HMM plus (optionally) its exact dense twin."""
    factors = _transition_factors(L, N, embed_dim, rng)
    start = rng.dirichlet(np.ones(L))
    emission = hmm_mod.CategoricalEmission(rng.dirichlet(np.ones(vocab), size=L))
    low = hmm_mod.HmmModel(start, LowRankScore(factors), emission)
    if not dense:
        return {"lowrank": low}
    dense_m = hmm_mod.HmmModel(
        start, DenseScore(materialize(factors, max_entries)), emission
    )
    return {"lowrank": low, "dense": dense_m}


def make_banded_hmm_pair(L: int, N: int, rng, vocab: int = 16, embed_dim: int = 16,
                         band_mass: float = 1.0, zero_band: bool = False):
    """Banded-transition HMM plus its exact dense twin.

    With ``zero_band`` the banded backend encodes exactly the same matrix
    as the plain low-rank normalization, so all three backends can be
    compared on one model.
    """
    fmap = _feature_map(EXP_LINEAR, N, embed_dim, rng)
    head = rng.standard_normal((L, embed_dim)) / np.sqrt(embed_dim)
    tail = rng.standard_normal((L, embed_dim)) / np.sqrt(embed_dim)
    u, v = fmap.apply(head), fmap.apply(tail)
    raw = LowRankFactors(u, v, np.ones(L), "head")

    h = N // 2
    if zero_band:
        theta = BandMatrix.zeros(L, h)
    else:
        # Scale band mass to a chosen multiple of the low-rank row mass so
        # neither component drowns the other.
        data = rng.uniform(0.0, 1.0, size=(L, 2 * h + 1))
        for d in range(-h, h + 1):
            col = data[:, h + d]
            if d > 0:
                col[L - d:] = 0.0
            elif d < 0:
                col[:-d] = 0.0
        lr_mass = float(np.mean(u @ np.sum(v, axis=0)))
        row_mass = np.sum(data, axis=1)
        data *= band_mass * lr_mass / max(float(np.mean(row_mass)), 1e-300)
        theta = BandMatrix(h, data)
    banded = build_banded(raw, theta)

    start = rng.dirichlet(np.ones(L))
    emission = hmm_mod.CategoricalEmission(rng.dirichlet(np.ones(vocab), size=L))
    models = {
        "banded": hmm_mod.HmmModel(start, BandedLowRankScore(banded), emission),
        "dense": hmm_mod.HmmModel(start, DenseScore(materialize(banded)), emission),
    }
    if zero_band:
        normalized = LowRankFactors(u, v, 1.0 / banded.Z, "head")
        models["lowrank"] = hmm_mod.HmmModel(start, LowRankScore(normalized), emission)
    return models


def make_hsmm_pair(L: int, N: int, rng, frame_dim: int = 4, max_duration: int = 4,
                   embed_dim: int = 16, dense: bool = True, banded: bool = False,
                   max_entries: int = MATERIALIZE_GUARD):
    factors = _transition_factors(L, N, embed_dim, rng)
    start = rng.dirichlet(np.ones(L))
    log_lambda = rng.normal(0.0, 0.5, size=L)
    means = rng.normal(0.0, 1.0, size=(L, frame_dim))
    variances = rng.uniform(0.5, 1.5, size=(L, frame_dim))

    def build(score):
        return hsmm_mod.HsmmModel(start, score, log_lambda, max_duration, means, variances)

    models = {"lowrank": build(LowRankScore(factors))}
    if dense:
        models["dense"] = build(DenseScore(materialize(factors, max_entries)))
    if banded:
        raw = LowRankFactors(factors.U, factors.V, np.ones(L), "head")
        zero = build_banded(raw, BandMatrix.zeros(L, factors.n_features // 2))
        models["banded"] = build(BandedLowRankScore(zero))
        models["lowrank"] = build(
            LowRankScore(LowRankFactors(factors.U, factors.V, 1.0 / zero.Z, "head"))
        )
        models["dense"] = build(DenseScore(materialize(zero)))
    return models


def make_pcfg_pair(nN: int, nP: int, N: int, rng, vocab: int = 16, embed_dim: int = 16,
                   dense: bool = True, max_entries: int = MATERIALIZE_GUARD):
    fmap = _feature_map(EXP_LINEAR_NORMSQ, N, embed_dim, rng)
    head = rng.standard_normal((nN, embed_dim)) / np.sqrt(embed_dim)
    tail = rng.standard_normal((nN * nN, embed_dim)) / np.sqrt(embed_dim)
    low = pcfg_mod.build_lpcfg(
        head, tail, fmap,
        np_logits=rng.normal(0.0, 1.0, size=(nN, nN, nP)),
        pn_logits=rng.normal(0.0, 1.0, size=(nN, nP, nN)),
        pp_logits=rng.normal(0.0, 1.0, size=(nN, nP, nP)),
        start_logits=rng.normal(0.0, 1.0, size=nN),
        terminal_logits=rng.normal(0.0, 1.0, size=(nP, vocab)),
    )
    models = {"lowrank": low}
    if dense:
        models["dense"] = pcfg_mod.PcfgModel(
            low.start, DenseScore(low.rules_nn.materialize(max_entries)),
            low.rules_np, low.rules_pn, low.rules_pp, low.terminal,
        )
    return models


def random_dense_hmm(L: int, vocab: int, rng) -> hmm_mod.HmmModel:
    return hmm_mod.HmmModel(
        rng.dirichlet(np.ones(L)),
        DenseScore(rng.dirichlet(np.ones(L), size=L)),
        hmm_mod.CategoricalEmission(rng.dirichlet(np.ones(vocab), size=L)),
    )


def random_dense_pcfg(nN: int, nP: int, vocab: int, rng) -> pcfg_mod.PcfgModel:
    """Proper random grammar with all four blocks dense."""
    blocks = [rng.gamma(1.0, 1.0, size=(nN, c))
              for c in (nN * nN, nN * nP, nP * nN, nP * nP)]
    mass = sum(b.sum(axis=1) for b in blocks)
    nn, np_, pn, pp = (b / mass[:, None] for b in blocks)
    return pcfg_mod.PcfgModel(
        rng.dirichlet(np.ones(nN)), DenseScore(nn), DenseScore(np_),
        DenseScore(pn), DenseScore(pp),
        rng.dirichlet(np.ones(vocab), size=nP),
    )


def _dense_param_bytes(cfg: BenchConfig, L: int) -> int:
    if cfg.family == "pcfg":
        return L * L * L * 8
    return L * L * 8


def _chart_bytes(cfg: BenchConfig, L: int) -> int:
    if cfg.family == "hmm":
        return 2 * L * 8
    if cfg.family == "hsmm":
        return (cfg.T + 1) * L * 8
    T = cfg.T
    spans_wide = (T + 1) * T // 2 - T
    return (T * (2 * L) + spans_wide * L) * 8


def _make_cell_models(cfg: BenchConfig, L: int, N: int, rng, with_dense: bool):
    budget_entries = cfg.budget_bytes // 8
    if cfg.family == "hmm":
        return make_hmm_pair(L, N, rng, cfg.vocab, cfg.embed_dim, dense=with_dense,
                             max_entries=budget_entries)
    if cfg.family == "hsmm":
        return make_hsmm_pair(L, N, rng, cfg.frame_dim, cfg.max_duration,
                              cfg.embed_dim, dense=with_dense,
                              max_entries=budget_entries)
    return make_pcfg_pair(L, 2 * L, N, rng, cfg.vocab, cfg.embed_dim,
                          dense=with_dense, max_entries=budget_entries)


def _make_cell_inputs(cfg: BenchConfig, rng):
    if cfg.family == "hsmm":
        return [rng.standard_normal((cfg.T, cfg.frame_dim)) for _ in range(cfg.batch)]
    return [rng.integers(0, cfg.vocab, size=cfg.T) for _ in range(cfg.batch)]


def _batch_fn(cfg: BenchConfig, model, inputs):
    """Callable computing the whole batch's log evidences.

    HMM batches run in lockstep (one matrix product per step for the whole
    batch); the other families process sequences one at a time.
    """
    if cfg.family == "hmm":
        stacked = np.stack(inputs)
        return lambda: hmm_mod.batch_log_marginal(model, stacked)
    marginal = hsmm_mod.log_marginal if cfg.family == "hsmm" else pcfg_mod.log_inside
    return lambda: [marginal(model, seq) for seq in inputs]


def _run_cell(cfg: BenchConfig, L: int, N: int) -> list[BenchRecord]:
    rng = _cell_rng(cfg, L, N)
    want_dense = "dense" in cfg.backends
    dense_fits = _dense_param_bytes(cfg, L) <= cfg.budget_bytes
    models = _make_cell_models(cfg, L, N, rng, with_dense=want_dense and dense_fits)
    inputs = _make_cell_inputs(cfg, rng)
    chart_bytes = _chart_bytes(cfg, L)

    records = []
    for backend in cfg.backends:
        if backend not in models:
            records.append(BenchRecord(cfg.family, L, N, backend,
                                       float("nan"), float("nan"), chart_bytes, True))
            continue
        run_batch = _batch_fn(cfg, models[backend], inputs)
        with threadpool_limits(limits=1):
            for _ in range(cfg.warmup):
                run_batch()
            times = []
            lls = None
            for _ in range(cfg.repeats):
                t0 = time.perf_counter()
                lls = run_batch()
                times.append(time.perf_counter() - t0)
        n_tokens = sum(len(seq) for seq in inputs)
        records.append(BenchRecord(
            cfg.family, L, N, backend,
            statistics.median(times), float(sum(lls)) / n_tokens, chart_bytes,
        ))
    return records


def run_grid(cfg: BenchConfig) -> list[BenchRecord]:
    """Timing records for every (L, N, backend) cell of the grid."""
    cells = []
    for L in cfg.L_grid:
        ns = [max(1, L // r) for r in cfg.ratio_grid] + [n for n in cfg.n_grid]
        for N in ns:
            cells.append((L, N))
    if cfg.parallel:
        with ThreadPoolExecutor() as pool:
            chunks = list(pool.map(lambda c: _run_cell(cfg, *c), cells))
    else:
        chunks = [_run_cell(cfg, *c) for c in cells]
    return [rec for chunk in chunks for rec in chunk]


@dataclass
class RankRow:
    label: str
    family: str
    L: int
    N: int | None
    transition_rank: int
    emission_rank: int | None


def rank_report(models, threshold: float = 1e-5) -> list[RankRow]:
    """Estimated numerical rank of each model's bottleneck scoring matrix.

    ``models`` is a list of (label, model) pairs; the emission rank is
    reported for dense categorical emissions only.
    """
    rows = []
    for label, model in models:
        if isinstance(model, hmm_mod.HmmModel):
            family, handle = "hmm", model.transition
        elif isinstance(model, hsmm_mod.HsmmModel):
            family, handle = "hsmm", model.transition
        elif isinstance(model, pcfg_mod.PcfgModel):
            family, handle = "pcfg", model.rules_nn
        else:
            raise TypeError(f"unsupported model type {type(model).__name__}")
        n = None
        if isinstance(handle, LowRankScore):
            n = handle.factors.n_features
        elif isinstance(handle, BandedLowRankScore):
            n = handle.factors.n_features
        rank = estimate_rank(handle.materialize(), threshold)
        emission_rank = None
        if isinstance(model, hmm_mod.HmmModel) and isinstance(
            model.emission, hmm_mod.CategoricalEmission
        ):
            emission_rank = estimate_rank(model.emission.probs, threshold)
        rows.append(RankRow(label, family, handle.head_dim, n, rank, emission_rank))
    return rows


def rank_table_csv(rows: list[RankRow]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["label", "family", "L", "N", "transition_rank", "emission_rank"])
    for r in rows:
        writer.writerow([
            r.label, r.family, r.L,
            "" if r.N is None else r.N,
            r.transition_rank,
            "" if r.emission_rank is None else r.emission_rank,
        ])
    return out.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def frontier_csv(records: list[BenchRecord], path) -> None:
    """Write records as UTF-8, LF-terminated CSV with a fixed column order."""
    lines = [",".join(CSV_HEADER)]
    for r in records:
        lines.append(",".join([
            r.family, str(r.L), str(r.N), r.backend,
            _fmt(r.seconds_per_batch), _fmt(r.ll_per_token),
            "true" if r.flagged else "false",
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
