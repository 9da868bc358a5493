"""Tests for the mixture fits and the family ablation."""

import csv
import logging

import numpy as np
import pytest

from gllmm_codec.coder import build_tables
from gllmm_codec.entropy import factorized_pmf, factorized_pmfs
from gllmm_codec.errors import ConfigError, ParameterError
from gllmm_codec.fitting import (
    FitConfig,
    ablation_run,
    empirical_entropy,
    fit_factorized,
    fit_mixture,
    generate_source,
    read_samples,
    write_samples,
)

GMM = (3, 0, 0)
GLAMM = (3, 3, 0)


@pytest.fixture(scope="module")
def gaussian_samples():
    return generate_source("gaussian", 50_000, seed=1)


@pytest.fixture(scope="module")
def mixed_ablation():
    rows = ablation_run("mixed", ["GMM", "GLaMM", "GLoMM", "GLLMM"], 50_000, seed=2, cfg=FitConfig(restarts=3))
    return {row["family"]: row["bits_per_symbol"] for row in rows}


def test_identical_samples_give_a_spike():
    result = fit_mixture(np.zeros(500, dtype=np.int64), FitConfig(counts=GMM))
    assert result.bits_per_symbol <= 0.01
    assert result.probability(0) >= 0.999


def test_spike_inside_a_wider_alphabet():
    result = fit_mixture(np.full(200, 3), FitConfig(), alphabet=(-10, 10))
    assert result.probability(3) >= 0.999
    assert result.bits_per_symbol <= 0.01


def test_gaussian_fit_approaches_the_histogram_entropy(gaussian_samples):
    result = fit_mixture(gaussian_samples, FitConfig(counts=GMM))
    entropy = empirical_entropy(gaussian_samples)
    assert entropy - 1e-9 <= result.bits_per_symbol <= entropy + 0.02
    np.testing.assert_allclose(result.params.probs, [1.0, 0.0, 0.0])


def test_laplacian_samples_favour_the_laplacian_family():
    samples = generate_source("laplacian", 50_000, seed=3)
    gmm = fit_mixture(samples, FitConfig(counts=GMM))
    glamm = fit_mixture(samples, FitConfig(counts=GLAMM), warm_starts=[gmm.params])
    assert glamm.bits_per_symbol <= gmm.bits_per_symbol + 0.005


def test_fits_are_reproducible(gaussian_samples):
    cfg = FitConfig(counts=(2, 1, 0), seed=4)
    first = fit_mixture(gaussian_samples, cfg)
    second = fit_mixture(gaussian_samples, cfg)
    assert first.bits_per_symbol == second.bits_per_symbol
    assert first.restart == second.restart
    np.testing.assert_array_equal(first.params.probs, second.params.probs)
    for a, b in zip(first.params.means, second.params.means):
        np.testing.assert_array_equal(a, b)


def test_parallel_restarts_match_serial_ones(gaussian_samples):
    serial = fit_mixture(gaussian_samples, FitConfig(counts=(1, 1, 1), restarts=3))
    parallel = fit_mixture(gaussian_samples, FitConfig(counts=(1, 1, 1), restarts=3, workers=3))
    assert serial.bits_per_symbol == parallel.bits_per_symbol
    assert serial.restart == parallel.restart


@pytest.mark.parametrize("method", ["l-bfgs-b", "adam"])
def test_accepted_steps_never_raise_the_loss(gaussian_samples, method):
    cfg = FitConfig(counts=(2, 0, 1), restarts=1, method=method, max_iterations=200)
    result = fit_mixture(gaussian_samples, cfg)
    history = np.array(result.history)
    assert history.size > 0
    assert np.all(np.diff(history) <= 1e-12)
    assert result.bits_per_symbol <= history[0] + 1e-12


def test_adam_gets_close_to_the_entropy(gaussian_samples):
    cfg = FitConfig(counts=(1, 0, 0), restarts=1, method="adam", max_iterations=2000, step_size=0.05)
    result = fit_mixture(gaussian_samples, cfg)
    assert result.bits_per_symbol <= empirical_entropy(gaussian_samples) + 0.02


def test_fit_errors():
    with pytest.raises(ParameterError):
        fit_mixture(np.zeros(99), FitConfig())
    with pytest.raises(ParameterError):
        fit_mixture(np.full(200, 0.5), FitConfig())
    with pytest.raises(ParameterError):
        fit_mixture(np.arange(200), FitConfig(), alphabet=(0, 100))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"restarts": 0},
        {"tolerance": 0.0},
        {"counts": (0, 0, 0)},
        {"counts": (1, 1)},
        {"method": "sgd"},
        {"workers": 0},
    ],
)
def test_invalid_fit_configs(kwargs):
    with pytest.raises(ConfigError):
        FitConfig(**kwargs)


# Factorized fits


def test_factorized_fit_of_zeros():
    model = fit_factorized([np.zeros(1000, dtype=np.int64)], (-2, 2))
    assert factorized_pmf(model, 0).probability(0) >= 0.99


def test_factorized_fit_of_uniform_samples():
    samples = np.random.default_rng(5).integers(-2, 3, size=100_000)
    pmf = factorized_pmf(fit_factorized([samples], (-2, 2)), 0)
    assert np.abs(pmf.probs - 0.2).max() <= 0.01


def test_smoothing_keeps_every_bin_coded():
    model = fit_factorized([np.full(10_000, 5), np.arange(-8, 9)], (-8, 8))
    for table in build_tables(factorized_pmfs(model)):
        assert table.frequencies.min() >= 1
        assert table.frequencies.sum() == 65536


def test_empty_channel_falls_back_to_uniform(caplog):
    with caplog.at_level(logging.WARNING):
        model = fit_factorized([np.array([], dtype=np.int64), np.zeros(50, dtype=np.int64)], (-1, 1))
    np.testing.assert_allclose(factorized_pmf(model, 0).probs, 1 / 3)
    assert "no samples" in caplog.text


def test_factorized_fit_rejects_out_of_range_samples():
    with pytest.raises(ParameterError):
        fit_factorized([np.array([0, 3])], (-2, 2))


# Ablation


def test_mixed_source_rewards_the_full_mixture(mixed_ablation):
    assert mixed_ablation["GLLMM"] <= mixed_ablation["GMM"] - 0.002


def test_mixed_source_ordering(mixed_ablation):
    assert mixed_ablation["GLLMM"] <= min(mixed_ablation["GLoMM"], mixed_ablation["GLaMM"]) + 0.005
    assert mixed_ablation["GLaMM"] <= mixed_ablation["GMM"] + 0.005
    assert mixed_ablation["GLoMM"] <= mixed_ablation["GMM"] + 0.005


def test_gaussian_source_does_not_regress():
    rows = ablation_run("gaussian", ["GLLMM", "GMM"], 20_000, seed=6, cfg=FitConfig(restarts=2))
    bits = {row["family"]: row["bits_per_symbol"] for row in rows}
    assert [row["family"] for row in rows] == ["GLLMM", "GMM"]
    assert bits["GLLMM"] <= bits["GMM"] + 0.005


def test_ablation_writes_csv(tmp_path):
    output = tmp_path / "ablation.csv"
    ablation_run("logistic", ["LoMM", "GMM"], 5_000, seed=7, cfg=FitConfig(restarts=1), output=output)
    with open(output, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["family", "K", "M", "N", "bits_per_symbol", "n_samples", "seed"]
    assert [row[:4] for row in rows[1:]] == [["LoMM", "0", "0", "3"], ["GMM", "3", "0", "0"]]
    assert rows[1][5:] == ["5000", "7"]


def test_ablation_errors():
    with pytest.raises(ConfigError):
        ablation_run("mixed", ["GMM", "GXMM"], 1000, seed=0)
    with pytest.raises(ConfigError):
        ablation_run("uniform", ["GMM"], 1000, seed=0)


# Sources and sample files


def test_sources_are_seeded_integers():
    first = generate_source("mixed", 1000, seed=8)
    assert first.dtype == np.int64
    np.testing.assert_array_equal(first, generate_source("mixed", 1000, seed=8))
    assert not np.array_equal(first, generate_source("mixed", 1000, seed=9))


def test_empirical_entropy():
    assert empirical_entropy([0, 1] * 50) == pytest.approx(1.0)
    assert empirical_entropy([4] * 10) == 0.0


def test_sample_files(tmp_path):
    path = tmp_path / "samples.i32"
    samples = np.array([-3, 0, 7, 2**20])
    write_samples(path, samples)
    assert path.stat().st_size == 16
    np.testing.assert_array_equal(read_samples(path), samples)

    path.write_bytes(b"\x00" * 5)
    with pytest.raises(ParameterError):
        read_samples(path)
    with pytest.raises(ParameterError):
        read_samples(tmp_path / "missing.i32")
