"""Top-P supports, truncated softmax, density ratios and diagnostics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vod.errors import InvalidArgument
from vod.retrieval import (
    build_support,
    effective_sample_size,
    kl_divergence,
    log_zeta,
    logsumexp,
    softmax_on_support,
)
from vod.sampling import DiscreteDistribution, priority_sample

finite = st.floats(-30, 30, allow_nan=False)


class TestBuildSupport:
    def test_p_covers_corpus(self):
        assert build_support([0.1, 0.3, 0.2], 5).tolist() == [1, 2, 0]

    def test_mapping_example(self):
        assert build_support({0: 2.0, 1: 5.0, 2: 3.0}, 2).tolist() == [1, 2]

    def test_ties(self):
        assert build_support(np.zeros(6), 3).tolist() == [0, 1, 2]

    def test_nan_rejected(self):
        with pytest.raises(InvalidArgument):
            build_support([0.0, float("nan")], 1)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgument):
            build_support([], 1)


class TestSoftmaxOnSupport:
    def test_uniform(self):
        d = softmax_on_support(np.full(4, 1.7))
        np.testing.assert_allclose(d.probs, 0.25, rtol=1e-15)

    def test_two_to_one(self):
        np.testing.assert_allclose(softmax_on_support([math.log(2), 0.0]).probs, [2 / 3, 1 / 3], rtol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=20), st.floats(-1e3, 1e3))
    def test_shift_invariance(self, scores, c):
        a = softmax_on_support(scores).log_probs
        b = softmax_on_support(np.asarray(scores) + c).log_probs
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_large_scores_stable(self):
        d = softmax_on_support([1000.0, 999.0])
        assert np.all(np.isfinite(d.log_probs))
        assert d.probs.sum() == pytest.approx(1.0)

    def test_nan_rejected(self):
        with pytest.raises(InvalidArgument):
            softmax_on_support([0.0, float("nan")])

    def test_read_only(self):
        d = softmax_on_support([0.0, 1.0])
        with pytest.raises(ValueError):
            d.scores[0] = 5.0


class TestLogZeta:
    def test_identical_scorers(self):
        assert log_zeta(1.5, 1.5) == 0.0

    def test_subtraction(self):
        assert log_zeta(3.0, 1.0) == 2.0

    def test_exhaustive_normalizer_ratio(self, rng):
        f_theta, f_phi = rng.normal(size=9), rng.normal(size=9)
        r = softmax_on_support(f_phi).probs
        ratio = float(r @ np.exp(log_zeta(f_theta, f_phi)))
        assert ratio == pytest.approx(np.exp(f_theta).sum() / np.exp(f_phi).sum(), rel=1e-13)


class TestKl:
    def test_zero_for_equal(self):
        d = softmax_on_support([0.3, 0.1, -2.0])
        assert kl_divergence(d, d) == 0.0

    def test_hand_value(self):
        r = softmax_on_support(np.log([0.5, 0.5]))
        p = softmax_on_support(np.log([0.9, 0.1]))
        expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
        assert kl_divergence(r, p) == pytest.approx(expected, rel=1e-13)
        assert kl_divergence(r, p) == pytest.approx(0.5108, abs=5e-5)

    def test_support_mismatch(self):
        with pytest.raises(InvalidArgument):
            kl_divergence(softmax_on_support([0.0, 1.0], [0, 1]), softmax_on_support([0.0, 1.0], [0, 2]))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=15))
    def test_nonnegative(self, pairs):
        a, b = np.array(pairs).T
        assert kl_divergence(softmax_on_support(a), softmax_on_support(b)) >= 0.0


class TestEss:
    def test_uniform(self):
        assert effective_sample_size(np.full(7, 0.3)) == pytest.approx(7.0)

    def test_one_hot(self):
        assert effective_sample_size([0.0, 0.0, 2.0]) == pytest.approx(1.0)

    def test_hand_value(self):
        assert effective_sample_size([3.0, 1.0]) == pytest.approx(1.6)

    def test_all_zero(self):
        with pytest.raises(InvalidArgument):
            effective_sample_size([0.0, 0.0])


def test_logsumexp_handles_neg_inf():
    assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
    assert logsumexp(np.array([0.0, -np.inf])) == 0.0


def test_normalizer_ratio_unbiased_in_linear_space(rng):
    """N=8, K=4: raw-weight priority estimates of Z_theta / Z_phi average to the exact ratio."""
    f_theta, f_phi = rng.normal(size=8), rng.normal(size=8)
    dist = DiscreteDistribution.from_logits(np.arange(8), f_phi)
    zeta = np.exp(f_theta - f_phi)
    est = []
    for seed in range(10_000):
        s = priority_sample(dist, 4, seed)
        est.append(s.raw_weights @ zeta[s.indices])
    est = np.array(est)
    exact = np.exp(f_theta).sum() / np.exp(f_phi).sum()
    assert abs(est.mean() - exact) < 4 * est.std(ddof=1) / np.sqrt(est.size)
