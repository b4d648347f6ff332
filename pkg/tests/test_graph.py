"""Weight-matrix validation, stationary vectors, spectra, mixing bounds."""

import math

import numpy as np
import pytest

from peerlearn import (
    NotStochasticError,
    NotStronglyConnectedError,
    PeriodicError,
    spectral_gap,
    stationary_distribution,
    validate_weight_matrix,
    verify_mixing_bound,
)

from helpers import random_weight_matrix

W_EXAMPLE = [[0.9, 0.1], [0.6, 0.4]]
W_SYMMETRIC = [[0.25, 0.75], [0.75, 0.25]]


class TestValidation:
    def test_accepts_reference_matrix(self):
        w = validate_weight_matrix(W_EXAMPLE)
        assert w.n_nodes == 2
        np.testing.assert_allclose(w.weights, W_EXAMPLE)

    def test_rejects_disconnected_identity(self):
        with pytest.raises(NotStronglyConnectedError):
            validate_weight_matrix([[1.0, 0.0], [0.0, 1.0]])

    def test_rejects_bad_row_sum(self):
        with pytest.raises(NotStochasticError) as info:
            validate_weight_matrix([[0.5, 0.6], [0.5, 0.5]])
        assert info.value.row == 0

    def test_rejects_negative_entry(self):
        with pytest.raises(NotStochasticError):
            validate_weight_matrix([[1.2, -0.2], [0.5, 0.5]])

    def test_rejects_periodic_two_cycle(self):
        with pytest.raises(PeriodicError) as info:
            validate_weight_matrix([[0.0, 1.0], [1.0, 0.0]])
        assert info.value.period == 2

    def test_accepts_aperiodic_cycle_mix(self):
        # 3-cycle plus a 2-cycle chord: gcd(3, 2) = 1, no self-loops.
        w = np.array([
            [0.0, 1.0, 0.0],
            [0.5, 0.0, 0.5],
            [1.0, 0.0, 0.0],
        ])
        validate_weight_matrix(w)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            validate_weight_matrix([[0.5, 0.5]])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            validate_weight_matrix([[np.inf, 0.0], [0.5, 0.5]])

    def test_weights_are_immutable(self):
        w = validate_weight_matrix(W_EXAMPLE)
        with pytest.raises(ValueError):
            w.weights[0, 0] = 0.5


class TestStationary:
    def test_reference_matrix(self):
        w = validate_weight_matrix(W_EXAMPLE)
        np.testing.assert_allclose(
            stationary_distribution(w), [6.0 / 7.0, 1.0 / 7.0], atol=1e-10
        )

    def test_doubly_stochastic_is_uniform(self, rng):
        # Convex combinations of permutation matrices are doubly stochastic;
        # including the identity and a full cycle keeps the chain valid.
        for n in (2, 3, 5):
            perms = [np.eye(n), np.eye(n)[(np.arange(n) + 1) % n]]
            perms += [np.eye(n)[rng.permutation(n)] for _ in range(3)]
            mix = rng.dirichlet(np.ones(len(perms)))
            doubly = sum(c * p for c, p in zip(mix, perms))
            w = validate_weight_matrix(doubly)
            np.testing.assert_allclose(
                stationary_distribution(w), np.full(n, 1.0 / n), atol=1e-9
            )

    def test_symmetric_two_node(self):
        w = validate_weight_matrix(W_SYMMETRIC)
        np.testing.assert_allclose(stationary_distribution(w), [0.5, 0.5], atol=1e-10)

    def test_power_matches_direct(self, rng):
        for n in range(2, 21):
            w = random_weight_matrix(rng, n)
            direct = stationary_distribution(w, method="direct")
            power = stationary_distribution(w, method="power")
            assert np.max(np.abs(direct - power)) < 1e-9

    def test_fixed_point_and_normalization(self, rng):
        for _ in range(20):
            w = random_weight_matrix(rng, int(rng.integers(2, 9)))
            v = stationary_distribution(w)
            assert abs(v.sum() - 1.0) < 1e-9
            assert np.all(v > 0)
            assert np.max(np.abs(v @ w.weights - v)) < 1e-8


class TestSpectralGap:
    def test_reference_matrix(self):
        summary = spectral_gap(validate_weight_matrix(W_EXAMPLE))
        assert summary.lambda_max == pytest.approx(0.3, abs=1e-12)

    def test_symmetric_matrix_uses_modulus(self):
        # Eigenvalues are {1, -0.5}; the subdominant modulus is 0.5.
        summary = spectral_gap(validate_weight_matrix(W_SYMMETRIC))
        assert summary.lambda_max == pytest.approx(0.5, abs=1e-12)

    def test_mixing_bound_value(self):
        summary = spectral_gap(validate_weight_matrix(W_EXAMPLE))
        expected = 4.0 * math.log(2.0) / 0.7
        assert summary.mixing_bound == pytest.approx(expected, rel=1e-12)
        assert summary.mixing_bound == pytest.approx(3.9608, abs=5e-5)

    def test_relabeling_invariance(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 8))
            w = random_weight_matrix(rng, n)
            perm = rng.permutation(n)
            p = np.eye(n)[perm]
            relabeled = validate_weight_matrix(p @ w.weights @ p.T)
            assert spectral_gap(relabeled).lambda_max == pytest.approx(
                spectral_gap(w).lambda_max, abs=1e-9
            )

    def test_lambda_in_valid_range(self, rng):
        for _ in range(30):
            w = random_weight_matrix(rng, int(rng.integers(2, 11)))
            lam = spectral_gap(w).lambda_max
            assert 0.0 <= lam < 1.0


class TestMixingBound:
    def test_reference_matrix_horizon_100(self):
        w = validate_weight_matrix(W_EXAMPLE)
        report = verify_mixing_bound(w, 100)
        assert report.all_within()
        assert np.all(report.partial_sums <= 3.9609)

    def test_rank_one_matrix_already_mixed(self):
        # Both rows equal the stationary vector, so every power matches it.
        w = validate_weight_matrix([[0.7, 0.3], [0.7, 0.3]])
        report = verify_mixing_bound(w, 25)
        assert np.all(report.partial_sums < 1e-12)

    def test_symmetric_matrix_horizon_50(self):
        w = validate_weight_matrix(W_SYMMETRIC)
        report = verify_mixing_bound(w, 50)
        bound = 4.0 * math.log(2.0) / 0.5
        assert report.bound == pytest.approx(bound, rel=1e-12)
        assert np.all(report.partial_sums <= bound)

    def test_matches_bruteforce_matrix_powers(self, rng):
        w = random_weight_matrix(rng, 4)
        horizon = 17
        report = verify_mixing_bound(w, horizon)
        v = stationary_distribution(w)
        expected = np.zeros(4)
        for k in range(1, horizon + 1):
            power_k = np.linalg.matrix_power(w.weights, k)
            expected += np.abs(power_k - v[None, :]).sum(axis=1)
        np.testing.assert_allclose(report.partial_sums, expected, atol=1e-9)

    def test_partial_sums_monotone_and_bounded(self, rng):
        # Monotonicity in the horizon plus the bound, over many random graphs.
        checked = 0
        while checked < 100:
            n = int(rng.integers(2, 11))
            w = random_weight_matrix(rng, n)
            short = verify_mixing_bound(w, 20)
            longer = verify_mixing_bound(w, 60)
            assert np.all(longer.partial_sums >= short.partial_sums - 1e-12)
            assert short.all_within() and longer.all_within()
            checked += 1

    def test_rejects_bad_horizon(self):
        w = validate_weight_matrix(W_EXAMPLE)
        with pytest.raises(ValueError):
            verify_mixing_bound(w, 0)
