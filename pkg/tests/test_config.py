"""Tests for JSON config documents and weight sidecars."""

import json

import pytest

from gllmm_codec.config import (
    fit_config_from_document,
    load_document,
    load_model_config,
    model_config_from_document,
    model_document,
    sidecar_path,
    write_sidecar,
)
from gllmm_codec.errors import ConfigError
from gllmm_codec.fitting import FitConfig
from gllmm_codec.network import ModelConfig


def test_empty_document_gives_defaults():
    assert model_config_from_document({}) == ModelConfig()
    assert fit_config_from_document({}) == FitConfig()


def test_document_values_are_read():
    document = {
        "model": {
            "latent_channels": 256,
            "mixture_counts": [3, 0, 3],
            "crm_stages": 3,
            "alphabets": {"y": [-64, 63]},
            "lambda": 0.0032,
        }
    }
    cfg = model_config_from_document(document)
    assert cfg.latent_channels == 256
    assert cfg.hyper_channels == 256
    assert cfg.mixture_counts == (3, 0, 3)
    assert cfg.crm_stages == 3
    assert cfg.y_alphabet == (-64, 63)
    assert cfg.z_alphabet == (-128, 127)
    assert cfg.lmbda == 0.0032


def test_overrides_win_over_the_document():
    document = {"model": {"crm_stages": 3, "lambda": 0.0032}}
    cfg = model_config_from_document(document, crm_stages=1, lmbda=None)
    assert cfg.crm_stages == 1
    assert cfg.lmbda == 0.0032


def test_fit_section():
    cfg = fit_config_from_document({"fit": {"restarts": 2, "method": "adam", "counts": [1, 1, 0]}}, seed=9)
    assert cfg.restarts == 2
    assert cfg.method == "adam"
    assert cfg.counts == (1, 1, 0)
    assert cfg.seed == 9


def test_invalid_values_are_config_errors():
    with pytest.raises(ConfigError):
        model_config_from_document({"model": {"crm_stages": 5}})
    with pytest.raises(ConfigError):
        fit_config_from_document({"fit": {"method": "newton"}})


def test_bad_documents(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_document(path)
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_document(path)
    with pytest.raises(ConfigError):
        load_document(tmp_path / "missing.json")


def test_model_document_loads_back():
    cfg = ModelConfig(mixture_counts=(2, 1, 0), crm_stages=1, lmbda=0.045, z_alphabet=(-32, 31))
    document = json.loads(json.dumps(model_document(cfg)))
    assert model_config_from_document(document) == cfg


def test_sidecar_next_to_the_weights(tmp_path):
    weights = tmp_path / "model.glws"
    cfg = ModelConfig(lmbda=0.0075)
    path = write_sidecar(weights, cfg)
    assert path == sidecar_path(weights)
    assert path.name == "model.glws.json"
    assert load_model_config(weights_path=weights) == cfg
    assert load_model_config(weights_path=tmp_path / "other.glws") == ModelConfig()


def test_explicit_document_beats_the_sidecar(tmp_path):
    weights = tmp_path / "model.glws"
    write_sidecar(weights, ModelConfig(lmbda=0.0075))
    explicit = tmp_path / "explicit.json"
    explicit.write_text(json.dumps({"model": {"lambda": 0.023}}), encoding="utf-8")
    assert load_model_config(explicit, weights_path=weights).lmbda == 0.023
