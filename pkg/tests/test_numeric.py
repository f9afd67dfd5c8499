import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lrinfer.numeric import ScaledVector, estimate_rank, logsumexp, matvec

from oracles import matvec_double_loop


finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


class TestLogsumexp:
    def test_identity_case(self):
        assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_all_neg_inf(self):
        assert logsumexp([-math.inf, -math.inf]) == -math.inf

    def test_large_values_no_overflow(self):
        assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            logsumexp([])

    @given(
        v=arrays(np.float64, st.integers(1, 12), elements=finite_floats),
        c=st.floats(min_value=-1e3, max_value=1e3, allow_nan=False),
    )
    def test_shift_invariance(self, v, c):
        assert logsumexp(v + c) == pytest.approx(logsumexp(v) + c, abs=1e-12, rel=1e-12)


class TestMatvec:
    def test_identity(self):
        v = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(matvec(np.eye(3), v), v)

    def test_hand_checked_2x2(self):
        out = matvec([[1.0, 1.0], [0.0, 2.0]], [3.0, 4.0])
        assert np.allclose(out, [7.0, 8.0], atol=0)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((5, 5))
        v = rng.standard_normal(5)
        assert np.allclose(matvec(m, v), matvec_double_loop(m, v), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matvec(np.eye(3), np.ones(4))


class TestEstimateRank:
    def test_identity(self):
        assert estimate_rank(np.eye(8)) == 8

    def test_product_rank_bound(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal((16, 3))
        v = rng.standard_normal((16, 3))
        assert estimate_rank(u @ v.T) <= 3

    def test_zero_matrix(self):
        assert estimate_rank(np.zeros((4, 4))) == 0

    def test_nonfinite_rejected(self):
        m = np.eye(3)
        m[0, 0] = np.nan
        with pytest.raises(ValueError):
            estimate_rank(m)

    @given(
        seed=st.integers(0, 10_000),
        rows=st.integers(2, 12),
        inner=st.integers(1, 6),
    )
    @settings(max_examples=40, deadline=None)
    def test_factor_pair_bound(self, seed, rows, inner):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((rows, inner))
        b = rng.standard_normal((rows, inner))
        assert estimate_rank(a @ b.T) <= inner


class TestScaledVector:
    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            ScaledVector(np.array([-1.0, 0.0]))
        with pytest.raises(ValueError):
            ScaledVector(np.array([np.inf, 0.0]))

    def test_renormalize_range(self):
        sv = ScaledVector(np.array([1e-200, 3e-190])).renormalize()
        assert 0.5 <= sv.values.max() <= 1.0

    def test_all_zero_unchanged(self):
        sv = ScaledVector(np.zeros(3), log_scale=2.5)
        out = sv.renormalize()
        assert out.log_scale == 2.5
        assert np.array_equal(out.values, np.zeros(3))

    @given(
        v=arrays(
            np.float64,
            st.integers(1, 8),
            # Entries within ~240 orders of magnitude of each other stay in
            # the normal range after power-of-two scaling.
            elements=st.floats(min_value=1e-120, max_value=1e120),
        ),
        scale=st.floats(min_value=-500, max_value=500, allow_nan=False),
    )
    def test_round_trip_preserves_value(self, v, scale):
        before = ScaledVector(v, scale)
        after = before.renormalize()
        # Compare in log space entrywise; the represented quantity can
        # overflow a plain float.
        np.testing.assert_allclose(
            after.log_entries(), before.log_entries(), rtol=1e-12, atol=1e-12
        )

    def test_times_adds_scales(self):
        a = ScaledVector(np.array([0.5, 1.0]), 3.0)
        b = ScaledVector(np.array([2.0, 0.25]), -1.0)
        out = a.times(b)
        assert out.log_scale == 2.0
        assert np.allclose(out.values, [1.0, 0.25])

    def test_from_log_handles_minus_inf(self):
        sv = ScaledVector.from_log(np.array([-math.inf, 0.0, -1.0]))
        assert sv.values[0] == 0.0
        assert sv.log_total() == pytest.approx(logsumexp([-math.inf, 0.0, -1.0]))
