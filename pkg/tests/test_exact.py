"""Enumeration oracle: log Z, moments, interpolated cumulants, KL.

The n=8 check uses a second, independently coded enumeration (itertools
states, explicit double loop for the pair term) so the two paths share no
code.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.special import expit

from bmapprox.exact import enumerate_model, interpolated_cumulant, kl_divergence
from bmapprox.model import BoltzmannModel, random_model


def independent_enumeration(model):
    """Second enumeration: plain loops, no shared helpers."""
    n = model.n
    values = []
    states = []
    for bits in itertools.product((0, 1), repeat=n):
        h = model.constant
        for i in range(n):
            h += model.bias[i] * bits[i]
            for j in range(n):
                h += 0.5 * model.coupling[i, j] * bits[i] * bits[j]
        values.append(h)
        states.append(bits)
    top = max(values)
    z = sum(math.exp(v - top) for v in values)
    log_z = top + math.log(z)
    means = np.zeros(n)
    pair = np.zeros((n, n))
    for bits, v in zip(states, values):
        p = math.exp(v - log_z)
        for i in range(n):
            means[i] += p * bits[i]
            for j in range(n):
                pair[i, j] += p * bits[i] * bits[j]
    return log_z, means, pair


class TestEnumerate:
    def test_single_free_node(self):
        model = BoltzmannModel(np.zeros(1), np.zeros((1, 1)))
        summary = enumerate_model(model)
        assert summary.log_z == pytest.approx(math.log(2.0), abs=1e-12)
        assert summary.means[0] == pytest.approx(0.5, abs=1e-12)

    def test_zero_coupling_factorises(self):
        model = BoltzmannModel(np.linspace(-2, 2, 6), np.zeros((6, 6)), constant=0.7)
        summary = enumerate_model(model)
        expected = 0.7 + sum(math.log1p(math.exp(b)) for b in model.bias)
        assert summary.log_z == pytest.approx(expected, abs=1e-12)
        assert np.allclose(summary.means, expit(model.bias), atol=1e-12)

    def test_matches_independent_enumeration(self):
        model = random_model(8, "full", 1.0, 2024)
        summary = enumerate_model(model)
        log_z, means, pair = independent_enumeration(model)
        assert summary.log_z == pytest.approx(log_z, abs=1e-10)
        assert np.allclose(summary.means, means, atol=1e-10)
        assert np.allclose(summary.pair_moments, pair, atol=1e-10)

    def test_moment_structure(self):
        summary = enumerate_model(random_model(6, "full", 1.5, 5))
        pm = summary.pair_moments
        assert np.allclose(pm, pm.T)
        assert np.allclose(np.diag(pm), summary.means)
        lower = np.maximum(0.0, summary.means[:, None] + summary.means[None, :] - 1.0)
        upper = np.minimum(summary.means[:, None], summary.means[None, :])
        assert np.all(pm <= upper + 1e-12)
        assert np.all(pm >= lower - 1e-12)

    def test_permutation_invariance(self):
        model = random_model(7, "full", 1.0, 9)
        perm = np.random.default_rng(0).permutation(7)
        permuted = BoltzmannModel(
            model.bias[perm], model.coupling[np.ix_(perm, perm)], model.constant
        )
        assert enumerate_model(permuted).log_z == pytest.approx(
            enumerate_model(model).log_z, abs=1e-10
        )

    def test_constant_shift(self):
        model = random_model(5, "full", 1.0, 13)
        shifted = BoltzmannModel(model.bias, model.coupling, model.constant + 3.25)
        a, b = enumerate_model(model), enumerate_model(shifted)
        assert b.log_z - a.log_z == pytest.approx(3.25, abs=1e-12)
        assert np.allclose(a.means, b.means, atol=1e-12)

    def test_large_potentials_no_overflow(self):
        model = BoltzmannModel(np.full(2, 350.0), np.zeros((2, 2)))
        assert enumerate_model(model).log_z == pytest.approx(700.0, abs=1e-9)

    def test_cap_refusal(self):
        model = BoltzmannModel(np.zeros(25), np.zeros((25, 25)))
        with pytest.raises(ValueError, match="exceeds the cap"):
            enumerate_model(model)
        # configurable cap
        small = random_model(5, "full", 1.0, 0)
        with pytest.raises(ValueError):
            enumerate_model(small, max_nodes=4)

    def test_zero_node_model(self):
        model = BoltzmannModel(np.zeros(0), np.zeros((0, 0)), constant=1.5)
        assert enumerate_model(model).log_z == 1.5


class TestInterpolatedCumulant:
    def test_identical_models_zero(self):
        model = random_model(5, "full", 1.0, 3)
        for order in (1, 2, 3, 4):
            for alpha in (0.0, 0.3, 1.0):
                assert interpolated_cumulant(model, model, alpha, order) == pytest.approx(
                    0.0, abs=1e-12
                )

    def test_first_cumulant_is_log_z_derivative(self):
        model0 = random_model(6, "full", 0.7, 1)
        model1 = random_model(6, "full", 1.0, 2)
        h = 1e-5
        for alpha in (0.2, 0.5, 0.8):
            mixed = lambda a: BoltzmannModel(
                (1 - a) * model0.bias + a * model1.bias,
                (1 - a) * model0.coupling + a * model1.coupling,
                (1 - a) * model0.constant + a * model1.constant,
            )
            fd = (
                enumerate_model(mixed(alpha + h)).log_z
                - enumerate_model(mixed(alpha - h)).log_z
            ) / (2 * h)
            k1 = interpolated_cumulant(model0, model1, alpha, 1)
            assert k1 == pytest.approx(fd, abs=1e-6)

    def test_taylor_remainder_bounded_by_fourth_cumulant(self):
        for seed in range(5):
            model0 = random_model(5, "full", 0.5, seed)
            model1 = random_model(5, "full", 0.8, seed + 100)
            log_z0 = enumerate_model(model0).log_z
            log_z1 = enumerate_model(model1).log_z
            series = sum(
                interpolated_cumulant(model0, model1, 0.0, k) / math.factorial(k)
                for k in (1, 2, 3)
            )
            residual = abs(log_z1 - log_z0 - series)
            k4_max = max(
                abs(interpolated_cumulant(model0, model1, a, 4))
                for a in np.linspace(0.0, 1.0, 21)
            )
            assert residual <= k4_max / 24.0 + 1e-12

    def test_order_validation(self):
        model = random_model(3, "full", 1.0, 0)
        with pytest.raises(ValueError):
            interpolated_cumulant(model, model, 0.0, 5)

    def test_node_count_mismatch(self):
        with pytest.raises(ValueError):
            interpolated_cumulant(
                random_model(3, "full", 1.0, 0), random_model(4, "full", 1.0, 0), 0.0, 1
            )


class TestKLDivergence:
    def test_identical_models(self):
        model = random_model(6, "full", 1.0, 8)
        assert kl_divergence(model, model) == pytest.approx(0.0, abs=1e-12)

    def test_constant_difference_cancels(self):
        model = random_model(6, "full", 1.0, 8)
        shifted = BoltzmannModel(model.bias, model.coupling, model.constant + 5.0)
        assert kl_divergence(model, shifted) == pytest.approx(0.0, abs=1e-12)

    def test_bound_gap_identity(self):
        # log Z1 - (log Z0 + <H1 - H0>_0) equals KL(Q0, Q1)
        for seed in range(8):
            q0 = random_model(6, "full", 0.8, seed)
            q1 = random_model(6, "full", 1.0, seed + 50)
            gap = (
                enumerate_model(q1).log_z
                - enumerate_model(q0).log_z
                - interpolated_cumulant(q0, q1, 0.0, 1)
            )
            assert gap == pytest.approx(kl_divergence(q0, q1), abs=1e-10)

    def test_nonnegative(self):
        for seed in range(10):
            q0 = random_model(5, "full", 1.0, seed)
            q1 = random_model(5, "full", 1.0, seed + 1000)
            assert kl_divergence(q0, q1) >= -1e-12
