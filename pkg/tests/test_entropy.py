"""Tests for the mixture likelihoods and rate estimates."""

import math

import numpy as np
import pytest
from scipy.special import softmax
from scipy.stats import norm

from gllmm_codec.entropy import (
    FactorizedModel,
    GllmmParams,
    Pmf,
    add_uniform_noise,
    discretized_pmf,
    estimate_rate,
    estimate_rate_noisy,
    factorized_pmf,
    factorized_pmfs,
    family_cdf,
    mixture_cdf,
    noisy_likelihood,
    quantize,
    rd_loss,
)
from gllmm_codec.errors import ParameterError, ShapeError, StateError
from gllmm_codec.tensor_nn import RealTensor

ALPHABET = (-128, 127)


def single_family(index, mu=0.0, sigma=1.0):
    probs = [0.0, 0.0, 0.0]
    probs[index] = 1.0
    weights = [[], [], []]
    means = [[], [], []]
    scales = [[], [], []]
    weights[index] = [1.0]
    means[index] = [mu]
    scales[index] = [sigma]
    return GllmmParams.single(probs, weights, means, scales)


def random_params(rng, rows, counts=(3, 3, 3)):
    probs = softmax(rng.normal(size=(rows, 3)), axis=-1)
    weights, means, scales = [], [], []
    for index, count in enumerate(counts):
        if count == 0:
            probs[:, index] = 0.0
        weights.append(softmax(rng.normal(size=(rows, count)), axis=-1))
        means.append(rng.uniform(-20.0, 20.0, size=(rows, count)))
        scales.append(np.exp(rng.uniform(np.log(1e-3), np.log(50.0), size=(rows, count))))
    probs /= probs.sum(axis=-1, keepdims=True)
    return GllmmParams(probs, tuple(weights), tuple(means), tuple(scales))


# Family CDFs


@pytest.mark.parametrize("family", ["gaussian", "laplacian", "logistic"])
def test_cdf_at_the_location_is_one_half(family):
    assert family_cdf(family, 1.7, 1.7, 3.0) == pytest.approx(0.5)


def test_family_cdf_closed_forms():
    assert family_cdf("logistic", 0.5, 0.0, 1.0) == pytest.approx(0.622459, abs=1e-6)
    assert family_cdf("laplacian", -0.5, 0.0, 1.0) == pytest.approx(0.303265, abs=1e-6)
    assert family_cdf("gaussian", 1.0, 0.0, 1.0) == pytest.approx(norm.cdf(1.0), abs=1e-12)


def test_family_cdf_rejects_non_positive_scale():
    with pytest.raises(ParameterError):
        family_cdf("gaussian", 0.0, 0.0, 0.0)
    with pytest.raises(ParameterError):
        family_cdf("logistic", 0.0, 0.0, -1.0)


# Discretised mixtures


@pytest.mark.parametrize(
    "index,expected",
    [(0, 0.382925), (1, 0.393469), (2, 0.244919)],
)
def test_unit_family_mass_at_zero(index, expected):
    pmf = discretized_pmf(single_family(index), ALPHABET)
    assert pmf.probability(0) == pytest.approx(expected, abs=1e-6)


def test_equal_mixture_mass_at_zero():
    params = GllmmParams.single(
        [1 / 3, 1 / 3, 1 / 3], [[1.0], [1.0], [1.0]], [[0.0], [0.0], [0.0]], [[1.0], [1.0], [1.0]]
    )
    pmf = discretized_pmf(params, ALPHABET)
    assert pmf.probability(0) == pytest.approx(0.340438, abs=1e-6)


def test_centred_mixture_is_symmetric():
    params = GllmmParams.single(
        [0.2, 0.5, 0.3],
        [[0.6, 0.4], [1.0], [0.1, 0.2, 0.7]],
        [[0.0, 0.0], [0.0], [0.0, 0.0, 0.0]],
        [[0.7, 3.0], [1.5], [0.3, 2.0, 5.0]],
    )
    pmf = discretized_pmf(params, (-10, 10))
    for s in range(1, 10):
        assert pmf.probability(s) == pytest.approx(pmf.probability(-s), abs=1e-12)


def test_edge_bins_absorb_the_tails():
    pmf = discretized_pmf(single_family(0, mu=0.0, sigma=4.0), (-3, 3))
    assert pmf.probability(-3) == pytest.approx(norm.cdf(-2.5, scale=4.0), abs=1e-12)
    assert pmf.probability(3) == pytest.approx(norm.sf(2.5, scale=4.0), abs=1e-12)
    assert pmf.probability(4) == 0.0


def test_random_params_give_normalised_pmfs():
    rng = np.random.default_rng(0)
    params = random_params(rng, 1000)
    pmf = discretized_pmf(params, ALPHABET)
    assert pmf.batch_shape == (1000,)
    np.testing.assert_allclose(pmf.probs.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(pmf.probs >= 0)


def test_single_gaussian_matches_normal_bins():
    pmf = discretized_pmf(single_family(0, mu=0.3, sigma=2.5), (-20, 20))
    cdf = norm.cdf(np.arange(-20, 20) + 0.5, loc=0.3, scale=2.5)
    expected = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
    np.testing.assert_allclose(pmf.probs, expected, rtol=0, atol=1e-9)


def test_gaussian_only_mixture_matches_weighted_normals():
    weights = [0.2, 0.5, 0.3]
    means = [-4.0, 0.5, 6.0]
    scales = [1.0, 2.0, 0.5]
    params = GllmmParams.single([1.0, 0.0, 0.0], [weights, [], []], [means, [], []], [scales, [], []])
    pmf = discretized_pmf(params, (-30, 30))
    boundaries = np.arange(-30, 30) + 0.5
    cdf = sum(w * norm.cdf(boundaries, m, s) for w, m, s in zip(weights, means, scales))
    expected = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
    np.testing.assert_allclose(pmf.probs, expected, rtol=0, atol=1e-9)


def test_tiny_scale_puts_all_mass_in_one_bin():
    pmf = discretized_pmf(single_family(0, mu=0.2, sigma=1e-6), ALPHABET)
    assert not np.isnan(pmf.probs).any()
    assert pmf.probability(0) == pytest.approx(1.0)


def test_mixture_cdf_is_monotone():
    rng = np.random.default_rng(1)
    params = random_params(rng, 50, counts=(3, 2, 1))
    points = np.sort(rng.uniform(-60.0, 60.0, size=400))
    cdf = mixture_cdf(params, points)
    assert cdf.shape == (50, 400)
    assert np.all(np.diff(cdf, axis=-1) >= -1e-15)
    assert np.all((cdf >= 0.0) & (cdf <= 1.0))


def test_invalid_params_are_rejected():
    with pytest.raises(ParameterError):
        GllmmParams.single([1.0, 0.0, 0.0], [[0.5, 0.4], [], []], [[0.0, 0.0], [], []], [[1.0, 1.0], [], []])
    with pytest.raises(ParameterError):
        GllmmParams.single([0.5, 0.5, 0.0], [[1.0], [], []], [[0.0], [], []], [[1.0], [], []])
    with pytest.raises(ParameterError):
        GllmmParams.single([1.0, 0.0, 0.0], [[1.0], [], []], [[0.0], [], []], [[0.0], [], []])
    with pytest.raises(ShapeError):
        GllmmParams.single([1.0, 0.0, 0.0], [[1.0], [], []], [[0.0, 1.0], [], []], [[1.0], [], []])


# Factorized model


def test_uniform_factorized_model():
    pmf = factorized_pmf(FactorizedModel.uniform(1, -1, 1), 0)
    np.testing.assert_allclose(pmf.probs, [1 / 3, 1 / 3, 1 / 3], atol=1e-9)


def test_factorized_pmfs_sum_to_one():
    rng = np.random.default_rng(2)
    model = FactorizedModel.from_bin_masses(rng.uniform(0.01, 1.0, size=(4, 9)), -4, 4)
    pmfs = factorized_pmfs(model)
    assert pmfs.batch_shape == (4,)
    np.testing.assert_allclose(pmfs.probs.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(factorized_pmf(model, 2).probs, pmfs.probs[2])


def test_factorized_cumulative_interpolates_between_knots():
    model = FactorizedModel.uniform(1, -1, 1)
    assert model.cumulative(0, -1.5) == pytest.approx(0.0)
    assert model.cumulative(0, 0.0) == pytest.approx(0.5)
    assert model.cumulative(0, 1.5) == pytest.approx(1.0)


def test_logits_reproduce_the_model():
    model = FactorizedModel.from_bin_masses([[1.0, 2.0, 5.0, 2.0]], 0, 3)
    again = FactorizedModel.from_logits(model.logits(), 0, 3)
    np.testing.assert_allclose(again.cdf, model.cdf, atol=1e-12)


def test_unfitted_model_is_a_state_error():
    model = FactorizedModel(-2, 2, channels=3)
    assert not model.is_fitted
    with pytest.raises(StateError):
        factorized_pmf(model, 0)
    with pytest.raises(StateError):
        model.cumulative(0, 0.0)


def test_factorized_model_validation():
    with pytest.raises(ParameterError):
        FactorizedModel(0, 1, [[0.0, 0.5, 0.5, 0.7, 1.0]])
    with pytest.raises(ShapeError):
        FactorizedModel(0, 1, [[0.0, 0.5, 1.0]])
    with pytest.raises(ParameterError):
        factorized_pmf(FactorizedModel.uniform(2, 0, 1), 2)


# Quantisation and noise


def test_quantize_rounds_half_away_and_clamps():
    y = RealTensor(np.array([0.4, -1.5, 300.0, 2.5, -0.4, -200.0]).reshape(1, 6, 1, 1))
    symbols = quantize(y, ALPHABET)
    np.testing.assert_array_equal(symbols.data.ravel(), [0, -2, 127, 3, 0, -128])
    assert symbols.data.dtype == np.int32
    assert symbols.clamped == 2
    assert symbols.clamp_rate == pytest.approx(2 / 6)


def test_noise_stays_inside_the_open_interval():
    y = RealTensor(np.zeros((1, 1, 1000, 1000)))
    noise = add_uniform_noise(y, seed=3).data.astype(np.float64)
    assert np.abs(noise).max() < 0.5
    assert abs(noise.mean()) < 3.0 * math.sqrt(1 / 12) / 1000


def test_noise_is_deterministic_per_seed():
    y = RealTensor(np.random.default_rng(0).normal(size=(1, 2, 8, 8)))
    assert add_uniform_noise(y, 5) == add_uniform_noise(y, 5)
    assert not add_uniform_noise(y, 5) == add_uniform_noise(y, 6)


# Rates


def test_quarter_probability_symbols_cost_two_bits():
    pmf = Pmf(0, 3, np.full((8, 4), 0.25))
    assert estimate_rate(np.arange(8) % 4, pmf) == 16.0


def test_certain_symbols_cost_nothing():
    pmf = Pmf(0, 1, np.tile([1.0, 0.0], (5, 1)))
    assert estimate_rate(np.zeros(5, dtype=np.int32), pmf) == 0.0


def test_rate_matches_per_symbol_sum():
    rng = np.random.default_rng(4)
    probs = rng.dirichlet(np.full(16, 0.3), size=200)
    symbols = rng.integers(-8, 8, size=200)
    pmf = Pmf(-8, 7, probs)
    expected = math.fsum(
        -math.log2(max(probs[i, s + 8], 2.0**-16)) for i, s in enumerate(symbols)
    )
    assert estimate_rate(symbols, pmf) == pytest.approx(expected, rel=1e-12)


def test_rate_rejects_symbols_outside_the_alphabet():
    pmf = Pmf(0, 3, np.full((2, 4), 0.25))
    with pytest.raises(ParameterError):
        estimate_rate(np.array([0, 4]), pmf)
    with pytest.raises(ShapeError):
        estimate_rate(np.array([0, 1, 2]), pmf)


def test_noisy_likelihood_of_a_unit_gaussian():
    params = GllmmParams(
        np.array([[1.0, 0.0, 0.0]]),
        (np.ones((1, 1)), np.zeros((1, 0)), np.zeros((1, 0))),
        (np.zeros((1, 1)), np.zeros((1, 0)), np.zeros((1, 0))),
        (np.ones((1, 1)), np.zeros((1, 0)), np.zeros((1, 0))),
    )
    assert noisy_likelihood(np.array([0.0]), params)[0] == pytest.approx(0.382925, abs=1e-6)


def test_noisy_rate_sums_the_interval_bits():
    params = GllmmParams(
        np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        (np.ones((2, 1)), np.zeros((2, 0)), np.zeros((2, 0))),
        (np.zeros((2, 1)), np.zeros((2, 0)), np.zeros((2, 0))),
        (np.ones((2, 1)), np.zeros((2, 0)), np.zeros((2, 0))),
    )
    y_tilde = np.array([0.0, 0.5])
    expected = -math.log2(norm.cdf(0.5) - norm.cdf(-0.5)) - math.log2(norm.cdf(1.0) - norm.cdf(0.0))
    assert estimate_rate_noisy(y_tilde, params) == pytest.approx(expected, abs=1e-9)
    assert estimate_rate_noisy(np.array([0.0, 0.0]), params) == pytest.approx(
        -2 * math.log2(0.382925), abs=1e-5
    )
    with pytest.raises(ShapeError):
        estimate_rate_noisy(np.zeros(3), params)


def test_rd_loss():
    assert rd_loss(0.0, 0.0, 0.0, 0.015, 100) == 0.0
    assert rd_loss(1.0, 300.0, 200.0, 0.015, 1000) == pytest.approx(0.515)
    doubled = rd_loss(1.0, 300.0, 200.0, 0.03, 1000)
    assert doubled - rd_loss(1.0, 300.0, 200.0, 0.015, 1000) == pytest.approx(0.015)
    with pytest.raises(ParameterError):
        rd_loss(1.0, 0.0, 0.0, 0.015, 0)
    with pytest.raises(ParameterError):
        rd_loss(1.0, 0.0, 0.0, -0.1, 10)
