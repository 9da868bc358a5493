"""Load model and fit configs from JSON documents."""

import json
import logging
from pathlib import Path

from jsonpath import jsonpath

from .errors import ConfigError
from .fitting import FitConfig
from .network import ModelConfig

_LOGGER = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".json"

MODEL_CONFIG_PATHS = {
    "latent_channels": "model.latent_channels",
    "hyper_channels": "model.hyper_channels",
    "mixture_counts": "model.mixture_counts",
    "crm_stages": "model.crm_stages",
    "y_alphabet": "model.alphabets.y",
    "z_alphabet": "model.alphabets.z",
    "lmbda": "model.lambda",
}

FIT_CONFIG_PATHS = {
    "counts": "fit.counts",
    "restarts": "fit.restarts",
    "max_iterations": "fit.max_iterations",
    "step_size": "fit.step_size",
    "seed": "fit.seed",
    "tolerance": "fit.tolerance",
    "method": "fit.method",
    "workers": "fit.workers",
}


def _resolve_path(document, path, default=None):
    result = jsonpath(document, path)
    if result is False:
        _LOGGER.debug("The configuration path %s has no value", path)
        return default
    return result[0]


def _resolve_fields(document, paths, overrides):
    values = {}
    for name, path in paths.items():
        value = _resolve_path(document, path)
        if value is not None:
            values[name] = value
    values.update({k: v for k, v in overrides.items() if v is not None})
    return values


def load_document(path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            document = json.load(handle)
    except OSError as err:
        raise ConfigError(f"Cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"Config {path} is not valid JSON: {err}") from err
    if not isinstance(document, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    return document


def model_config_from_document(document: dict, **overrides) -> ModelConfig:
    try:
        return ModelConfig(**_resolve_fields(document, MODEL_CONFIG_PATHS, overrides))
    except TypeError as err:
        raise ConfigError(f"Invalid model config: {err}") from err


def fit_config_from_document(document: dict, **overrides) -> FitConfig:
    try:
        return FitConfig(**_resolve_fields(document, FIT_CONFIG_PATHS, overrides))
    except TypeError as err:
        raise ConfigError(f"Invalid fit config: {err}") from err


def model_document(cfg: ModelConfig) -> dict:
    """The JSON document that loads back to cfg."""
    return {
        "model": {
            "latent_channels": cfg.latent_channels,
            "hyper_channels": cfg.hyper_channels,
            "mixture_counts": list(cfg.mixture_counts),
            "crm_stages": cfg.crm_stages,
            "alphabets": {"y": list(cfg.y_alphabet), "z": list(cfg.z_alphabet)},
            "lambda": cfg.lmbda,
        }
    }


def sidecar_path(weights_path) -> Path:
    weights_path = Path(weights_path)
    return weights_path.with_name(weights_path.name + SIDECAR_SUFFIX)


def write_sidecar(weights_path, cfg: ModelConfig) -> Path:
    path = sidecar_path(weights_path)
    path.write_text(json.dumps(model_document(cfg), indent=2), encoding="utf-8")
    return path


def load_model_config(path=None, weights_path=None, **overrides) -> ModelConfig:
    """Model config from an explicit document, else the weights sidecar, else defaults."""
    document = {}
    if path is not None:
        document = load_document(path)
    elif weights_path is not None and sidecar_path(weights_path).exists():
        document = load_document(sidecar_path(weights_path))
    return model_config_from_document(document, **overrides)
