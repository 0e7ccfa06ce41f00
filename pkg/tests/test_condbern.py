"""Conditional-Bernoulli / ESP machinery against brute-force enumeration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from s3ribp import (
    DomainError,
    LogESPTable,
    gibbs_z_entry_logodds,
    inclusion_probs,
    log_esp,
    log_odds,
    poisson_binomial_log_pmf,
    restricted_row_log_prior,
    sample_row_given_sum,
)
from conftest import brute_force_inclusion, brute_force_sum_probs, enumerate_rows


def random_pi(rng, k, lo=0.02, hi=0.95):
    return rng.uniform(lo, hi, size=k)


def log_f_from_probs(f):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(f, dtype=np.float64))


class TestLogESP:
    def test_small_vector_by_hand(self):
        # e_0..e_3 of (1, 2, 3) are 1, 6, 11, 6
        table = log_esp(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(np.exp(table.log_e), [1.0, 6.0, 11.0, 6.0], rtol=1e-12)
        assert table.k == 3

    def test_zero_odds_do_not_contribute(self):
        table = log_esp(np.array([1.0, 0.0, 2.0]))
        np.testing.assert_allclose(np.exp(table.log_e), [1.0, 3.0, 2.0, 0.0], atol=1e-300)

    def test_empty_vector(self):
        table = log_esp(np.array([]))
        np.testing.assert_allclose(table.log_e, [0.0])
        assert table.k == 0

    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(DomainError):
            log_esp(np.array([1.0, -0.5]))
        with pytest.raises(DomainError):
            log_esp(np.array([np.inf]))
        with pytest.raises(DomainError):
            log_esp(np.array([[1.0, 2.0]]))

    def test_table_validation(self):
        with pytest.raises(DomainError):
            LogESPTable(np.array([0.5, 0.0]))
        with pytest.raises(DomainError):
            LogESPTable(np.zeros((2, 2)))

    @given(
        st.lists(st.floats(min_value=0.01, max_value=50.0), min_size=1, max_size=8),
        st.floats(min_value=0.01, max_value=50.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_recurrence_property(self, w_list, extra):
        # e_s(w + {v}) = e_s(w) + v * e_{s-1}(w)
        w = np.array(w_list)
        base = np.exp(log_esp(w).log_e)
        grown = np.exp(log_esp(np.append(w, extra)).log_e)
        expected = np.append(base, 0.0) + extra * np.append([0.0], base)
        np.testing.assert_allclose(grown, expected, rtol=1e-9)


class TestLogOdds:
    def test_values(self):
        np.testing.assert_allclose(log_odds(np.array([0.5, 0.25])), [0.0, np.log(1 / 3)])

    def test_rejects_boundary(self):
        for bad in ([0.0, 0.5], [0.5, 1.0], [-0.1]):
            with pytest.raises(DomainError):
                log_odds(np.array(bad))


class TestPoissonBinomial:
    def test_matches_enumeration(self, rng):
        for k in (1, 2, 5, 9):
            pi = random_pi(rng, k)
            exact = brute_force_sum_probs(pi)
            got = [np.exp(poisson_binomial_log_pmf(pi, s)) for s in range(k + 1)]
            np.testing.assert_allclose(got, exact, rtol=1e-10)

    def test_out_of_range_sum(self):
        with pytest.raises(DomainError):
            poisson_binomial_log_pmf(np.array([0.5]), 2)
        with pytest.raises(DomainError):
            poisson_binomial_log_pmf(np.array([0.5]), -1)


class TestInclusionProbs:
    def test_two_feature_hand_value(self):
        # pi = (0.2, 0.6): w = (0.25, 1.5); P(z_0=1 | s=1) = 0.25/1.75 = 1/7
        got = inclusion_probs(np.array([0.2, 0.6]), 1)
        np.testing.assert_allclose(got, [1 / 7, 6 / 7], rtol=1e-12)

    def test_edge_sums(self):
        pi = np.array([0.3, 0.7, 0.2])
        np.testing.assert_allclose(inclusion_probs(pi, 0), np.zeros(3))
        np.testing.assert_allclose(inclusion_probs(pi, 3), np.ones(3), rtol=1e-12)

    def test_matches_enumeration_randomized(self, rng):
        for _ in range(25):
            k = int(rng.integers(2, 10))
            s = int(rng.integers(0, k + 1))
            pi = random_pi(rng, k, lo=0.01, hi=0.99)
            got = inclusion_probs(pi, s)
            if s == 0:
                np.testing.assert_allclose(got, np.zeros(k))
            else:
                np.testing.assert_allclose(got, brute_force_inclusion(pi, s), atol=1e-10)

    def test_extreme_weight_spread(self):
        # weights spanning many orders of magnitude stay finite and exact
        pi = np.array([1e-12, 0.5, 1 - 1e-12])
        got = inclusion_probs(pi, 1)
        np.testing.assert_allclose(got, brute_force_inclusion(pi, 1), atol=1e-10)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            inclusion_probs(np.array([0.5, 0.5]), 3)

    @given(
        st.lists(st.floats(min_value=0.01, max_value=0.99), min_size=1, max_size=8),
        st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_sums_to_target(self, pi_list, data):
        pi = np.array(pi_list)
        s = data.draw(st.integers(min_value=0, max_value=pi.shape[0]))
        np.testing.assert_allclose(inclusion_probs(pi, s).sum(), s, atol=1e-9)


class TestSampleRowGivenSum:
    def test_sum_always_exact(self, rng):
        for _ in range(200):
            k = int(rng.integers(1, 9))
            s = int(rng.integers(0, k + 1))
            pi = random_pi(rng, k, lo=0.01, hi=0.99)
            z = sample_row_given_sum(pi, s, rng)
            assert z.sum() == s
            assert z.shape == (k,)
            assert set(np.unique(z)) <= {0, 1}

    def test_distribution_chi_square(self, rng):
        pi = np.array([0.15, 0.5, 0.8, 0.4])
        s = 2
        rows = enumerate_rows(4)
        keep = rows.sum(axis=1) == s
        support = rows[keep]
        probs = np.prod(np.where(support == 1, pi, 1.0 - pi), axis=1)
        probs /= probs.sum()
        draws = np.array([sample_row_given_sum(pi, s, rng) for _ in range(20000)])
        codes = draws @ (1 << np.arange(4))
        support_codes = support @ (1 << np.arange(4))
        counts = np.array([(codes == c).sum() for c in support_codes])
        assert counts.sum() == 20000
        chi2 = stats.chisquare(counts, probs * 20000)
        assert chi2.pvalue > 0.01

    def test_out_of_range(self, rng):
        with pytest.raises(DomainError):
            sample_row_given_sum(np.array([0.5]), 2, rng)


class TestRestrictedRowLogPrior:
    def test_normalizes_over_rows(self, rng):
        for _ in range(10):
            k = int(rng.integers(1, 8))
            pi = random_pi(rng, k, lo=0.01, hi=0.99)
            f = rng.dirichlet(np.ones(k + 1))
            log_f = log_f_from_probs(f)
            total = sum(
                np.exp(restricted_row_log_prior(z, pi, log_f)) for z in enumerate_rows(k)
            )
            np.testing.assert_allclose(total, 1.0, atol=1e-10)

    def test_matches_direct_formula(self, rng):
        pi = np.array([0.3, 0.6, 0.1])
        f = np.array([0.1, 0.5, 0.3, 0.1])
        log_f = log_f_from_probs(f)
        z = np.array([1, 0, 1], dtype=np.int8)
        # f(s) times the conditional-Bernoulli probability of this subset
        sum_probs = brute_force_sum_probs(pi)
        joint = np.prod(np.where(z == 1, pi, 1 - pi))
        expected = np.log(f[2]) + np.log(joint / sum_probs[2])
        np.testing.assert_allclose(restricted_row_log_prior(z, pi, log_f), expected, rtol=1e-12)

    def test_zero_mass_sum_gives_neg_inf(self):
        pi = np.array([0.4, 0.4])
        log_f = log_f_from_probs([0.5, 0.0, 0.5])
        assert restricted_row_log_prior(np.array([1, 0]), pi, log_f) == -np.inf

    def test_reuses_esp_table(self):
        pi = np.array([0.2, 0.7])
        log_f = log_f_from_probs([0.25, 0.5, 0.25])
        table = log_esp(np.exp(log_odds(pi)))
        a = restricted_row_log_prior(np.array([0, 1]), pi, log_f)
        b = restricted_row_log_prior(np.array([0, 1]), pi, log_f, esp=table)
        np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_shape_and_binary_validation(self):
        pi = np.array([0.5, 0.5])
        log_f = log_f_from_probs([0.3, 0.4, 0.3])
        with pytest.raises(DomainError):
            restricted_row_log_prior(np.array([1, 0, 1]), pi, log_f)
        with pytest.raises(DomainError):
            restricted_row_log_prior(np.array([2, 0]), pi, log_f)
        with pytest.raises(DomainError):
            restricted_row_log_prior(np.array([1, 0]), pi, log_f[:2])


class TestGibbsEntryLogOdds:
    def brute_conditional_logodds(self, z_row, k, pi, log_f):
        z1 = z_row.copy()
        z1[k] = 1
        z0 = z_row.copy()
        z0[k] = 0
        return restricted_row_log_prior(z1, pi, log_f) - restricted_row_log_prior(
            z0, pi, log_f
        )

    def test_two_feature_hand_value(self):
        # pi = (0.2, 0.6), uniform f over sums: with the other entry off,
        # P(z_0 = 1) works out to 1/8, so the log odds are log(1/7)
        pi = np.array([0.2, 0.6])
        log_f = log_f_from_probs([1 / 3, 1 / 3, 1 / 3])
        got = gibbs_z_entry_logodds(np.array([0, 0]), 0, pi, log_f)
        sum_probs = brute_force_sum_probs(pi)
        p1 = (1 / 3) * pi[0] * (1 - pi[1]) / sum_probs[1]
        p0 = (1 / 3) * (1 - pi[0]) * (1 - pi[1]) / sum_probs[0]
        np.testing.assert_allclose(got, np.log(p1 / p0), rtol=1e-12)
        np.testing.assert_allclose(got, np.log(1 / 7), rtol=1e-12)

    def test_matches_joint_ratio_randomized(self, rng):
        for _ in range(40):
            kk = int(rng.integers(2, 8))
            pi = random_pi(rng, kk, lo=0.02, hi=0.98)
            f = rng.dirichlet(np.ones(kk + 1))
            log_f = log_f_from_probs(f)
            z = (rng.random(kk) < 0.5).astype(np.int8)
            k = int(rng.integers(kk))
            got = gibbs_z_entry_logodds(z, k, pi, log_f)
            want = self.brute_conditional_logodds(z, k, pi, log_f)
            np.testing.assert_allclose(got, want, rtol=1e-9)

    def test_likelihood_ratio_is_additive(self):
        pi = np.array([0.3, 0.5, 0.2])
        log_f = log_f_from_probs([0.25, 0.25, 0.25, 0.25])
        z = np.array([0, 1, 0], dtype=np.int8)
        base = gibbs_z_entry_logodds(z, 0, pi, log_f)
        shifted = gibbs_z_entry_logodds(z, 0, pi, log_f, loglik_ratio=-2.5)
        np.testing.assert_allclose(shifted, base - 2.5, rtol=1e-12)

    def test_one_sided_zero_mass_forces_entry(self):
        pi = np.array([0.4, 0.4])
        # no mass at sum 2: an entry that would push the sum there is forced off
        log_f = log_f_from_probs([0.5, 0.5, 0.0])
        assert gibbs_z_entry_logodds(np.array([0, 1]), 0, pi, log_f) == -np.inf
        # no mass at sum 0: with the other entry off, this one is forced on,
        # regardless of how strongly the likelihood argues against it
        log_f = log_f_from_probs([0.0, 0.5, 0.5])
        assert gibbs_z_entry_logodds(np.array([0, 0]), 0, pi, log_f) == np.inf
        assert (
            gibbs_z_entry_logodds(np.array([0, 0]), 0, pi, log_f, loglik_ratio=-1e6)
            == np.inf
        )

    def test_contradictory_row_sum_law(self):
        pi = np.array([0.4, 0.4])
        log_f = log_f_from_probs([0.0, 0.0, 1.0])
        with pytest.raises(DomainError):
            gibbs_z_entry_logodds(np.array([0, 0]), 0, pi, log_f)

    def test_index_validation(self):
        pi = np.array([0.4, 0.4])
        log_f = log_f_from_probs([0.3, 0.4, 0.3])
        with pytest.raises(DomainError):
            gibbs_z_entry_logodds(np.array([0, 0]), 2, pi, log_f)


class TestKernelInvariance:
    def test_single_sweep_preserves_row_prior(self, rng):
        # start rows at exact draws from the restricted prior, apply one
        # systematic Gibbs sweep of entry updates, and check the resulting
        # state histogram still matches the prior by chi-square
        pi = np.array([0.35, 0.6, 0.15])
        f = np.array([0.2, 0.4, 0.3, 0.1])
        log_f = log_f_from_probs(f)
        rows = enumerate_rows(3)
        prior = np.array(
            [np.exp(restricted_row_log_prior(z, pi, log_f)) for z in rows]
        )
        n_chains = 20000
        sums = rng.choice(4, size=n_chains, p=f)
        states = np.array([sample_row_given_sum(pi, int(s), rng) for s in sums])
        for k in range(3):
            lo = np.array(
                [gibbs_z_entry_logodds(z, k, pi, log_f) for z in states]
            )
            p_on = 1.0 / (1.0 + np.exp(-lo))
            states[:, k] = (rng.random(n_chains) < p_on).astype(np.int8)
        codes = states @ (1 << np.arange(3))
        counts = np.bincount(codes, minlength=8)
        chi2 = stats.chisquare(counts, prior * n_chains)
        assert chi2.pvalue > 0.01
