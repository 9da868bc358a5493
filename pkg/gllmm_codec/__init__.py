"""Learned image compression with Gaussian-Laplacian-Logistic mixture entropy models."""

from .codec import Bitstream, compress, decompress
from .entropy import GllmmParams, discretized_pmf, estimate_rate, quantize
from .errors import GllmmCodecError
from .fitting import FitConfig, ablation_run, fit_mixture
from .network import ModelConfig
from .weight_store import WeightStore, init_random, load, save

__all__ = [
    "Bitstream",
    "FitConfig",
    "GllmmCodecError",
    "GllmmParams",
    "ModelConfig",
    "WeightStore",
    "ablation_run",
    "compress",
    "decompress",
    "discretized_pmf",
    "estimate_rate",
    "fit_mixture",
    "init_random",
    "load",
    "quantize",
    "save",
]
