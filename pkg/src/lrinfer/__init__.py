"""Exact inference for structured sequence models with swappable scoring backends.

Marginalization over HMMs, hidden semi-Markov models, and CNF PCFGs is
expressed as dynamic programming on a labeled directed hypergraph whose
per-edge scoring matrices can be dense, low-rank factored, or
banded-plus-low-rank.  The factored backends turn the per-edge contraction
into two thin matrix-vector products, trading expressivity (bounded rank)
for asymptotically faster inference; a benchmark harness measures that
trade empirically.
"""

from .numeric import ScaledVector, estimate_rank, logsumexp, matvec
from .lowrank import (
    BandMatrix,
    BandedLowRankFactors,
    FeatureMap,
    LowRankFactors,
    MaterializeLimitError,
    build_banded,
    build_factors,
    init_orthogonal,
    materialize,
)
from .hypergraph import (
    BandedLowRankScore,
    DenseScore,
    Hyperedge,
    Hypergraph,
    LowRankScore,
    ScoreMatrix,
    SemiringBackendError,
    apply_score,
    join_tails,
    marginalize,
    max_semiring_counterexample,
)
from .hmm import HmmModel, em_fit, expressivity_report, rank_two_reference_model
from .hsmm import HsmmModel
from .pcfg import PcfgModel, build_lpcfg, log_inside, map_parse
from .bench import BenchConfig, BenchRecord, frontier_csv, rank_report, run_grid

__version__ = "0.1.0"
