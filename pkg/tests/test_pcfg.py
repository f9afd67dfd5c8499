import itertools
import math

import numpy as np
import pytest

from lrinfer import pcfg
from lrinfer.bench import make_pcfg_pair, random_dense_pcfg
from lrinfer.hypergraph import DenseScore, marginalize
from lrinfer.lowrank import EXP_LINEAR_NORMSQ, FeatureMap, MaterializeLimitError, init_orthogonal
from lrinfer.numeric import estimate_rank

from helpers import pcfg_dense_tables, pcfg_span_hypergraph
from oracles import (
    pcfg_log_inside_enum,
    pcfg_log_inside_flat_enum,
    pcfg_viterbi_enum,
)


def catalan(n):
    return math.comb(2 * n, n) // (n + 1)


def minimal_grammar(q_nn=0.25, q_np=0.25, q_pn=0.25, q_pp=0.25, vocab=2):
    """nN = nP = 1 grammar; the four block masses must sum to one."""
    return pcfg.PcfgModel(
        start=np.array([1.0]),
        rules_nn=DenseScore([[q_nn]]),
        rules_np=DenseScore([[q_np]]),
        rules_pn=DenseScore([[q_pn]]),
        rules_pp=DenseScore([[q_pp]]),
        terminal=np.full((1, vocab), 1.0 / vocab),
    )


class TestLogInside:
    def test_tree_count_structure_with_uniform_blocks(self):
        # Every expansion costs 1/4 regardless of child kinds, so the
        # evidence is (#binary trees) * (1/4)^(T-1) * (1/V)^T.
        vocab = 2
        model = minimal_grammar(vocab=vocab)
        for T in range(2, 6):
            tokens = np.zeros(T, dtype=np.int64)
            expected = catalan(T - 1) * 0.25 ** (T - 1) * (1.0 / vocab) ** T
            assert pcfg.log_inside(model, tokens) == pytest.approx(
                math.log(expected), rel=1e-12
            )

    def test_right_branching_score_is_rule_product(self):
        model = minimal_grammar(q_nn=0.05, q_np=0.15, q_pn=0.6, q_pp=0.2, vocab=1)
        T = 6
        # With vocab=1 terminals are certain; the right comb uses q_pn at
        # every level except the last, which uses q_pp.
        tokens = np.zeros(T, dtype=np.int64)
        right_comb = (T - 2) * math.log(0.6) + math.log(0.2)
        total = pcfg.log_inside(model, tokens)
        assert total >= right_comb  # all trees, so at least the single comb
        enum = pcfg_log_inside_enum(*pcfg_dense_tables(model), tokens)
        assert total == pytest.approx(enum, rel=1e-12)

    def test_oracle_against_flat_enumeration(self):
        rng = np.random.default_rng(0)
        model = random_dense_pcfg(2, 2, 3, rng)
        tables = pcfg_dense_tables(model)
        for T in (2, 3, 4):
            tokens = rng.integers(0, 3, size=T)
            a = pcfg_log_inside_enum(*tables, tokens)
            b = pcfg_log_inside_flat_enum(*tables, tokens)
            assert a == pytest.approx(b, rel=1e-12)

    def test_matches_tree_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            nN = int(rng.integers(1, 3))
            nP = int(rng.integers(1, 4))
            V = int(rng.integers(1, 5))
            T = int(rng.integers(2, 6))
            model = random_dense_pcfg(nN, nP, V, rng)
            tokens = rng.integers(0, V, size=T)
            expected = pcfg_log_inside_enum(*pcfg_dense_tables(model), tokens)
            assert pcfg.log_inside(model, tokens) == pytest.approx(expected, rel=1e-9)

    def test_matches_hypergraph_engine(self):
        rng = np.random.default_rng(2)
        model = random_dense_pcfg(2, 3, 4, rng)
        tokens = rng.integers(0, 4, size=6)
        graph, leaf_init = pcfg_span_hypergraph(model, tokens)
        assert pcfg.log_inside(model, tokens) == pytest.approx(
            marginalize(graph, leaf_init), rel=1e-10
        )

    def test_backend_equivalence(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            nN = int(rng.integers(2, 17))
            nP = int(rng.integers(2, 17))
            N = int(rng.integers(1, 9))
            models = make_pcfg_pair(nN, nP, N, rng, vocab=8)
            T = int(rng.integers(2, 13))
            tokens = rng.integers(0, 8, size=T)
            a = pcfg.log_inside(models["dense"], tokens)
            b = pcfg.log_inside(models["lowrank"], tokens)
            assert a == pytest.approx(b, rel=1e-9)

    def test_string_sum_bounded_and_monotone(self):
        rng = np.random.default_rng(4)
        model = random_dense_pcfg(2, 2, 2, rng)
        totals = []
        running = 0.0
        for T in (2, 3, 4):
            for tokens in itertools.product(range(2), repeat=T):
                running += math.exp(pcfg.log_inside(model, np.array(tokens)))
            totals.append(running)
        assert totals == sorted(totals)
        assert totals[-1] <= 1.0 + 1e-9

    def test_split_order_does_not_matter(self):
        rng = np.random.default_rng(5)
        model = random_dense_pcfg(3, 3, 4, rng)
        tokens = rng.integers(0, 4, size=9)
        base = pcfg.log_inside(model, tokens)
        orders = [
            lambda i, k, js: list(reversed(js)),
            lambda i, k, js: sorted(js, key=lambda j: (j % 2, j)),
        ]
        perm_rng = np.random.default_rng(99)
        orders.append(lambda i, k, js: list(perm_rng.permutation(js)))
        for order in orders:
            assert pcfg.log_inside(model, tokens, split_order=order) == pytest.approx(
                base, rel=1e-10
            )

    def test_short_sentence_rejected(self):
        model = minimal_grammar()
        with pytest.raises(ValueError, match="underivable"):
            pcfg.log_inside(model, np.array([0]))

    def test_token_out_of_vocab(self):
        model = minimal_grammar(vocab=2)
        with pytest.raises(ValueError, match="outside vocab"):
            pcfg.log_inside(model, np.array([0, 2]))


class TestMapParse:
    def test_deterministic_grammar_recovers_tree(self):
        # NP mass is zero, so the only length-3 derivation is the right
        # comb PN(leaf, PP(leaf, leaf)).
        model = minimal_grammar(q_nn=0.0, q_np=0.0, q_pn=0.5, q_pp=0.5, vocab=1)
        tree, score = pcfg.map_parse(model, np.array([0, 0, 0]))
        spans = set(tree.spans())
        assert (0, 3, 0, False) in spans
        assert (1, 3, 0, False) in spans
        assert score == pytest.approx(math.log(0.5 * 0.5), rel=1e-12)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            nN = int(rng.integers(1, 3))
            nP = int(rng.integers(1, 3))
            model = random_dense_pcfg(nN, nP, 3, rng)
            tokens = rng.integers(0, 3, size=4)
            exp_score, exp_spans = pcfg_viterbi_enum(*pcfg_dense_tables(model), tokens)
            tree, score = pcfg.map_parse(model, tokens)
            assert score == pytest.approx(exp_score, rel=1e-10)
            assert set(tree.spans()) == exp_spans

    def test_exact_tie_prefers_smaller_split(self):
        model = minimal_grammar()  # powers of two everywhere: exact ties
        tree, _ = pcfg.map_parse(model, np.array([0, 1, 0]))
        left, right = tree.children
        assert (left.start, left.end) == (0, 1)
        assert (right.start, right.end) == (1, 3)

    def test_lowrank_above_guard_refused(self):
        rng = np.random.default_rng(7)
        models = make_pcfg_pair(12, 4, 2, rng, vocab=4)
        with pytest.raises(MaterializeLimitError):
            pcfg.map_parse(models["lowrank"], np.array([0, 1]), max_dense_entries=100)


class TestBuildLpcfg:
    def test_zero_embeddings_give_uniform_nn_block(self):
        nN, nP, V, N = 3, 2, 4, 2
        fmap = FeatureMap(EXP_LINEAR_NORMSQ, np.zeros((N, 3)))
        model = pcfg.build_lpcfg(
            np.zeros((nN, 3)), np.zeros((nN * nN, 3)), fmap,
            np_logits=np.zeros((nN, nN, nP)),
            pn_logits=np.zeros((nN, nP, nN)),
            pp_logits=np.zeros((nN, nP, nP)),
            start_logits=np.zeros(nN),
            terminal_logits=np.zeros((nP, V)),
        )
        dense_nn = model.rules_nn.materialize()
        assert np.allclose(dense_nn, dense_nn[0, 0], atol=1e-12)

    def test_full_rule_table_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        models = make_pcfg_pair(5, 4, 3, rng, vocab=6)
        m = models["lowrank"]
        joint = (
            m.rules_nn.materialize().sum(axis=1)
            + m.rules_np.materialize().sum(axis=1)
            + m.rules_pn.materialize().sum(axis=1)
            + m.rules_pp.materialize().sum(axis=1)
        )
        np.testing.assert_allclose(joint, 1.0, atol=1e-9)

    def test_nn_block_rank_bounded(self):
        rng = np.random.default_rng(9)
        for N in (1, 2, 4):
            models = make_pcfg_pair(6, 3, N, rng, vocab=4)
            assert estimate_rank(models["lowrank"].rules_nn.materialize()) <= N

    def test_joint_normalization_enforced(self):
        with pytest.raises(ValueError, match="jointly"):
            pcfg.PcfgModel(
                start=np.array([1.0]),
                rules_nn=DenseScore([[0.5]]),
                rules_np=DenseScore([[0.5]]),
                rules_pn=DenseScore([[0.5]]),
                rules_pp=DenseScore([[0.5]]),
                terminal=np.array([[1.0]]),
            )
