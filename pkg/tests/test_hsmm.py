import math

import numpy as np
import pytest

from lrinfer import hmm, hsmm
from lrinfer.bench import make_hsmm_pair
from lrinfer.hypergraph import DenseScore
from lrinfer.numeric import ScaledVector

from oracles import compositions, hsmm_log_marginal_enum


def single_state_model(log_lambda=0.0, max_duration=2, mean=0.0, var=1.0):
    return hsmm.HsmmModel(
        start=np.array([1.0]),
        transition=DenseScore(np.array([[1.0]])),
        log_lambda=np.array([log_lambda]),
        max_duration=max_duration,
        means=np.array([[mean]]),
        variances=np.array([[var]]),
    )


def random_model(rng, L, M, d, lowrank=False):
    if lowrank:
        return make_hsmm_pair(L, max(1, L // 2), rng, frame_dim=d, max_duration=M)
    return hsmm.HsmmModel(
        start=rng.dirichlet(np.ones(L)),
        transition=DenseScore(rng.dirichlet(np.ones(L), size=L)),
        log_lambda=rng.normal(0, 0.5, size=L),
        max_duration=M,
        means=rng.normal(0, 1, size=(L, d)),
        variances=rng.uniform(0.5, 1.5, size=(L, d)),
    )


def dense_tables(model):
    trans = model.transition.materialize()
    pmfs = [hsmm.duration_pmf(model, z) for z in range(model.n_states)]
    return model.start, trans, pmfs, model.means, model.variances


class TestDurationPmf:
    def test_single_length_forced(self):
        model = single_state_model(max_duration=1)
        assert np.array_equal(hsmm.duration_pmf(model, 0), [1.0])

    def test_tiny_rate_concentrates_on_one(self):
        model = single_state_model(log_lambda=math.log(0.01), max_duration=3)
        assert hsmm.duration_pmf(model, 0)[0] >= 0.99

    def test_rate_two_truncated_at_four(self):
        model = single_state_model(log_lambda=math.log(2.0), max_duration=4)
        raw = np.array([2.0, 2.0, 4.0 / 3.0, 2.0 / 3.0]) * math.exp(-2.0)
        np.testing.assert_allclose(hsmm.duration_pmf(model, 0), raw / raw.sum(), rtol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        model = random_model(rng, 4, 6, 2)
        for z in range(4):
            assert hsmm.duration_pmf(model, z).sum() == pytest.approx(1.0, abs=1e-12)


class TestLogMarginal:
    def test_single_state_composition_structure(self):
        model = single_state_model(log_lambda=0.3, max_duration=3)
        rng = np.random.default_rng(1)
        frames = rng.standard_normal((4, 1))
        pmf = hsmm.duration_pmf(model, 0)
        gauss = math.exp(float(np.sum(hsmm.gaussian_log_likelihoods(model, frames))))
        seg_mass = sum(
            math.prod(pmf[l - 1] for l in parts) for parts in compositions(4, 3)
        )
        assert hsmm.log_marginal(model, frames) == pytest.approx(
            math.log(gauss * seg_mass), rel=1e-10
        )

    def test_two_frame_hand_sum(self):
        model = single_state_model(max_duration=2)
        frames = np.array([[0.3], [-0.7]])
        pmf = hsmm.duration_pmf(model, 0)
        dens = [
            math.exp(-0.5 * (x * x + math.log(2 * math.pi))) for x in (0.3, -0.7)
        ]
        expected = dens[0] * dens[1] * (pmf[1] + pmf[0] * pmf[0])
        assert hsmm.log_marginal(model, frames) == pytest.approx(math.log(expected), rel=1e-12)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            L = int(rng.integers(1, 4))
            M = int(rng.integers(1, 4))
            T = int(rng.integers(1, 7))
            d = int(rng.integers(1, 3))
            model = random_model(rng, L, M, d)
            frames = rng.standard_normal((T, d))
            expected = hsmm_log_marginal_enum(*dense_tables(model), frames)
            assert hsmm.log_marginal(model, frames) == pytest.approx(expected, rel=1e-9)

    def test_backend_equivalence(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            L = int(rng.integers(2, 33))
            models = make_hsmm_pair(L, max(1, L // 4), rng, frame_dim=3, max_duration=4)
            frames = rng.standard_normal((int(rng.integers(1, 21)), 3))
            a = hsmm.log_marginal(models["dense"], frames)
            b = hsmm.log_marginal(models["lowrank"], frames)
            assert a == pytest.approx(b, rel=1e-9)

    def test_three_backend_trio(self):
        rng = np.random.default_rng(4)
        models = make_hsmm_pair(16, 4, rng, frame_dim=2, max_duration=3, banded=True)
        frames = rng.standard_normal((12, 2))
        vals = [hsmm.log_marginal(m, frames) for m in models.values()]
        assert max(vals) - min(vals) <= 1e-9 * max(1.0, abs(vals[0]))

    def test_degenerate_duration_reduces_to_markov_chain(self):
        rng = np.random.default_rng(5)
        L, d, T = 3, 2, 9
        model = random_model(rng, L, 1, d)
        frames = rng.standard_normal((T, d))
        columns = [
            ScaledVector.from_log(row)
            for row in hsmm.gaussian_log_likelihoods(model, frames)
        ]
        chain = hmm.chain_log_marginal(model.start, model.transition, columns)
        assert hsmm.log_marginal(model, frames) == pytest.approx(chain, rel=1e-10)

    def test_evidence_integrates_to_one(self):
        model = hsmm.HsmmModel(
            start=np.array([0.4, 0.6]),
            transition=DenseScore(np.array([[0.5, 0.5], [0.2, 0.8]])),
            log_lambda=np.array([0.0, 0.0]),
            max_duration=1,
            means=np.array([[-1.0], [0.8]]),
            variances=np.array([[0.7], [1.3]]),
        )
        xs = np.linspace(-14, 14, 6001)
        density = np.array(
            [math.exp(hsmm.log_marginal(model, np.array([[x]]))) for x in xs]
        )
        integral = np.trapezoid(density, xs)
        assert integral == pytest.approx(1.0, abs=1e-3)

    def test_long_sequence_stays_finite(self):
        rng = np.random.default_rng(6)
        model = random_model(rng, 4, 5, 3)
        frames = rng.standard_normal((600, 3))
        assert math.isfinite(hsmm.log_marginal(model, frames))


class TestSampling:
    def test_unit_durations_when_truncated_at_one(self):
        rng = np.random.default_rng(7)
        model = random_model(rng, 3, 1, 2)
        segments, frames = hsmm.sample(model, 25, seed=0)
        assert all(length == 1 for _, length in segments)
        assert frames.shape == (25, 2)

    def test_frame_mean_near_state_mean(self):
        model = single_state_model(max_duration=3, mean=2.5, var=0.04)
        _, frames = hsmm.sample(model, 10_000, seed=1)
        sem = math.sqrt(0.04 / frames.shape[0])
        assert abs(frames.mean() - 2.5) <= 3 * sem

    def test_total_length_and_determinism(self):
        rng = np.random.default_rng(8)
        model = random_model(rng, 3, 4, 2)
        seg1, fr1 = hsmm.sample(model, 37, seed=5)
        seg2, fr2 = hsmm.sample(model, 37, seed=5)
        assert sum(l for _, l in seg1) == 37
        assert seg1 == seg2
        assert np.array_equal(fr1, fr2)


class TestValidation:
    def test_bad_max_duration(self):
        with pytest.raises(ValueError):
            single_state_model(max_duration=0)

    def test_nonpositive_variance(self):
        with pytest.raises(ValueError):
            hsmm.HsmmModel(
                np.array([1.0]), DenseScore(np.array([[1.0]])), np.array([0.0]),
                2, np.array([[0.0]]), np.array([[0.0]]),
            )

    def test_frame_dim_mismatch(self):
        model = single_state_model()
        with pytest.raises(ValueError):
            hsmm.log_marginal(model, np.zeros((3, 2)))
