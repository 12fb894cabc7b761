import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import digamma as sp_digamma

from conftest import brute_force_ksg, gaussian_mi
from selfservo.mi import MiConfig, SampleSet, add_gaussian_noise, digamma, ksg_mi, ksg_mi_batch

EULER_GAMMA = 0.5772156649015329


def gaussian_pair(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    return x, rho * x + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)


class TestDigamma:
    def test_one_is_minus_euler_gamma(self):
        assert digamma(1.0) == pytest.approx(-EULER_GAMMA, abs=1e-10)

    def test_two_by_recurrence(self):
        assert digamma(2.0) == pytest.approx(1 - EULER_GAMMA, abs=1e-10)

    def test_ten_from_harmonic_number(self):
        # psi(n) = H_{n-1} - gamma for integer n.
        expected = sum(1.0 / j for j in range(1, 10)) - EULER_GAMMA
        assert expected == pytest.approx(2.2517525891, abs=1e-10)
        assert digamma(10.0) == pytest.approx(expected, abs=1e-10)

    @given(st.floats(min_value=1e-3, max_value=1e6))
    def test_matches_reference(self, x):
        assert digamma(x) == pytest.approx(sp_digamma(x), abs=1e-10, rel=1e-12)

    @given(st.floats(min_value=1e-3, max_value=1e3))
    def test_recurrence(self, x):
        assert digamma(x + 1) - digamma(x) == pytest.approx(1.0 / x, rel=1e-9, abs=1e-10)

    def test_vectorized(self):
        xs = np.array([0.5, 1.0, 7.25, 300.0])
        np.testing.assert_allclose(digamma(xs), sp_digamma(xs), atol=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -1.0, -0.5, math.inf, math.nan])
    def test_domain_error(self, bad):
        with pytest.raises(ValueError):
            digamma(bad)


class TestSampleSet:
    def test_vectors_become_columns(self):
        s = SampleSet(np.arange(5.0), np.arange(5.0))
        assert s.x.shape == (5, 1) and len(s) == 5

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            SampleSet(np.zeros(4), np.zeros(5))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            SampleSet(np.array([0.0, np.nan, 1.0]), np.zeros(3))


class TestKsgMi:
    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((60, 2))
        y = x[:, :1] + 0.5 * rng.standard_normal((60, 1))
        est = ksg_mi(SampleSet(x, y), MiConfig(k=3))
        assert est == pytest.approx(brute_force_ksg(x, y, 3), abs=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.integers(5, 40), st.integers(1, 4))
    def test_batch_matches_oracle(self, seed, n, k):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, 3))
        y = rng.standard_normal((n, 2))
        if k >= n:
            return
        assert ksg_mi_batch(x[None], y, k)[0] == pytest.approx(brute_force_ksg(x, y, k), abs=1e-9)

    def test_independent_near_zero(self):
        rng = np.random.default_rng(0)
        est = ksg_mi(SampleSet(rng.standard_normal(2000), rng.standard_normal(2000)))
        assert abs(est) <= 0.05

    def test_gaussian_rho_09(self):
        x, y = gaussian_pair(0.9, 2000, 1)
        assert ksg_mi(SampleSet(x, y)) == pytest.approx(gaussian_mi(0.9), abs=0.1)

    def test_identity_is_large(self):
        x = np.random.default_rng(2).standard_normal(2000)
        assert ksg_mi(SampleSet(x, x.copy())) > 2.0

    def test_requires_more_samples_than_k(self):
        with pytest.raises(ValueError):
            ksg_mi(SampleSet(np.arange(3.0), np.arange(3.0)), MiConfig(k=3))

    def test_symmetry(self):
        x, y = gaussian_pair(0.6, 500, 3)
        s = SampleSet(x, y)
        assert ksg_mi(s) == pytest.approx(ksg_mi(s.swapped()), abs=1e-9)

    def test_affine_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2000, 2))
        y = x[:, :1] + rng.standard_normal((2000, 1))
        A = np.array([[2.0, 0.7], [-0.3, 1.5]])
        moved = x @ A.T + np.array([5.0, -3.0])
        assert abs(ksg_mi(SampleSet(moved, y)) - ksg_mi(SampleSet(x, y))) < 0.05

    def test_independence_mean_over_seeds(self):
        rng = np.random.default_rng(5)
        ests = [ksg_mi(SampleSet(rng.standard_normal(2000), rng.standard_normal(2000)), MiConfig(rng_seed=s))
                for s in range(20)]
        assert abs(np.mean(ests)) <= 0.05

    def test_monotone_in_dependence(self):
        ests = [ksg_mi(SampleSet(*gaussian_pair(rho, 2000, 6))) for rho in (0.0, 0.5, 0.9)]
        assert ests[0] < ests[1] < ests[2]

    def test_noise_lowers_estimate(self):
        means = []
        for v in (0.0, 0.4, 0.8, 1.6):
            vals = []
            for seed in range(20):
                x, y = gaussian_pair(0.9, 500, 100 + seed)
                vals.append(ksg_mi(SampleSet(x, y), MiConfig(noise_variance=v, rng_seed=seed)))
            means.append(np.mean(vals))
        assert all(b <= a for a, b in zip(means, means[1:]))

    def test_deterministic(self):
        x, y = gaussian_pair(0.5, 300, 8)
        s = SampleSet(x, y)
        assert ksg_mi(s, MiConfig(rng_seed=3)) == ksg_mi(s, MiConfig(rng_seed=3))

    def test_ties_do_not_break_estimator(self):
        # Quantised data with many exact duplicates.
        rng = np.random.default_rng(9)
        x = np.round(rng.standard_normal(400))
        est = ksg_mi(SampleSet(x, x + np.round(rng.standard_normal(400))))
        assert np.isfinite(est)


class TestGaussianNoise:
    def test_zero_variance_is_identity(self):
        s = SampleSet(np.arange(10.0), np.arange(10.0))
        out = add_gaussian_noise(s, 0.0, 1)
        np.testing.assert_array_equal(out.x, s.x)

    def test_deterministic(self):
        s = SampleSet(np.zeros(50), np.arange(50.0))
        a = add_gaussian_noise(s, 1.6, 11)
        b = add_gaussian_noise(s, 1.6, 11)
        np.testing.assert_array_equal(a.x, b.x)

    def test_variance_and_actions_untouched(self):
        s = SampleSet(np.zeros((1000, 3)), np.arange(1000.0))
        out = add_gaussian_noise(s, 1.6, 2)
        np.testing.assert_allclose(out.x.var(axis=0), 1.6, rtol=0.15)
        np.testing.assert_array_equal(out.y, s.y)

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            add_gaussian_noise(SampleSet(np.zeros(5), np.zeros(5)), -1.0, 0)
