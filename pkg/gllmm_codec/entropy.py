"""Mixture likelihoods, discretisation, quantisation and rate estimates."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Optional

import numpy as np
from scipy.special import erfc, expit

from .const import FAMILIES, PMF_FLOOR
from .errors import ParameterError, ShapeError, StateError
from .tensor_nn import RealTensor

_LOGGER = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_SUM_TOLERANCE = 1e-6
_CHUNK_ROWS = 2048


def standard_cdf(family: str, z):
    z = np.asarray(z, dtype=np.float64)
    if family == "gaussian":
        return 0.5 * erfc(-z / _SQRT2)
    if family == "laplacian":
        tail = 0.5 * np.exp(-np.abs(z))
        return np.where(z < 0, tail, 1.0 - tail)
    if family == "logistic":
        return expit(z)
    raise ParameterError(f"Unknown family {family}")


def standard_pdf(family: str, z):
    z = np.asarray(z, dtype=np.float64)
    if family == "gaussian":
        return np.exp(-0.5 * z * z) / _SQRT2PI
    if family == "laplacian":
        return 0.5 * np.exp(-np.abs(z))
    if family == "logistic":
        return expit(z) * expit(-z)
    raise ParameterError(f"Unknown family {family}")


def interval_mass(family: str, z_lo, z_hi):
    """F(z_hi) - F(z_lo), evaluated on the short tail side.

    All three families are symmetric, so right of the mode the masses are
    taken as F(-z_lo) - F(-z_hi) to keep precision.
    """
    z_lo = np.asarray(z_lo, dtype=np.float64)
    z_hi = np.asarray(z_hi, dtype=np.float64)
    right = z_lo > 0
    lo = np.where(right, -z_hi, z_lo)
    hi = np.where(right, -z_lo, z_hi)
    return np.maximum(standard_cdf(family, hi) - standard_cdf(family, lo), 0.0)


def family_cdf(family: str, x, mu, sigma):
    """CDF of one location-scale family at x."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ParameterError("Scale must be positive")
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    return standard_cdf(family, z)


@dataclass(frozen=True, eq=False)
class GllmmParams:
    """Mixture parameters for every site of a batch.

    probs has shape batch + (3,); weights, means and scales hold one array
    per family with shape batch + (count,).
    """

    probs: np.ndarray
    weights: tuple
    means: tuple
    scales: tuple

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim < 1 or probs.shape[-1] != len(FAMILIES):
            raise ShapeError(f"probs needs a trailing axis of {len(FAMILIES)}, got {probs.shape}")
        batch = probs.shape[:-1]
        arrays = {}
        for field_name in ("weights", "means", "scales"):
            values = getattr(self, field_name)
            if len(values) != len(FAMILIES):
                raise ShapeError(f"{field_name} needs one entry per family")
            arrays[field_name] = tuple(np.asarray(v, dtype=np.float64) for v in values)

        counts = []
        for index, family in enumerate(FAMILIES):
            w = arrays["weights"][index]
            count = w.shape[-1] if w.ndim else 0
            for field_name in ("weights", "means", "scales"):
                value = arrays[field_name][index]
                if value.shape != batch + (count,):
                    raise ShapeError(
                        f"{family} {field_name} has shape {value.shape}, expected {batch + (count,)}"
                    )
            if count == 0:
                if np.any(probs[..., index] > _SUM_TOLERANCE):
                    raise ParameterError(f"Absent family {family} carries probability mass")
            else:
                if np.any(np.abs(w.sum(axis=-1) - 1.0) > _SUM_TOLERANCE):
                    raise ParameterError(f"{family} weights do not sum to 1")
                if np.any(w < 0):
                    raise ParameterError(f"{family} weights must not be negative")
                if not np.all(np.isfinite(arrays["means"][index])):
                    raise ParameterError(f"{family} means are not finite")
                scales = arrays["scales"][index]
                if np.any(~np.isfinite(scales)) or np.any(scales <= 0):
                    raise ParameterError(f"{family} scales must be positive")
            counts.append(count)

        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > _SUM_TOLERANCE):
            raise ParameterError("Family probabilities must be a distribution")

        object.__setattr__(self, "probs", probs)
        for field_name, values in arrays.items():
            object.__setattr__(self, field_name, values)
        object.__setattr__(self, "_counts", tuple(counts))

    @classmethod
    def single(cls, probs, weights, means, scales) -> GllmmParams:
        """Parameters of one site from plain sequences."""
        return cls(
            np.asarray(probs, dtype=np.float64),
            tuple(np.asarray(v, dtype=np.float64).reshape(-1) for v in weights),
            tuple(np.asarray(v, dtype=np.float64).reshape(-1) for v in means),
            tuple(np.asarray(v, dtype=np.float64).reshape(-1) for v in scales),
        )

    @property
    def counts(self):
        return self._counts

    @property
    def batch_shape(self):
        return self.probs.shape[:-1]

    def flat(self):
        """The parameters with the batch flattened to rows."""
        rows = int(np.prod(self.batch_shape, dtype=np.int64))
        return (
            self.probs.reshape(rows, len(FAMILIES)),
            tuple(v.reshape(rows, c) for v, c in zip(self.weights, self.counts)),
            tuple(v.reshape(rows, c) for v, c in zip(self.means, self.counts)),
            tuple(v.reshape(rows, c) for v, c in zip(self.scales, self.counts)),
        )


def _mixture_cdf_rows(probs, weights, means, scales, points):
    total = np.zeros(np.broadcast_shapes(points.shape, (probs.shape[0], points.shape[-1])))
    for index, family in enumerate(FAMILIES):
        if weights[index].shape[-1] == 0:
            continue
        z = (points[:, None, :] - means[index][:, :, None]) / scales[index][:, :, None]
        family_total = np.einsum("rk,rkb->rb", weights[index], standard_cdf(family, z))
        total += probs[:, index, None] * family_total
    return total


def mixture_cdf(params: GllmmParams, x) -> np.ndarray:
    """Mixture CDF at x; x has shape batch + (B,) or (B,) shared by all sites."""
    probs, weights, means, scales = params.flat()
    rows = probs.shape[0]
    points = np.asarray(x, dtype=np.float64)
    shared = points.ndim == 1
    if shared:
        count = points.shape[0]
        points = points.reshape(1, count)
    else:
        if points.shape[:-1] != params.batch_shape:
            raise ShapeError(f"Points {points.shape} do not match batch {params.batch_shape}")
        count = points.shape[-1]
        points = points.reshape(rows, count)

    out = np.empty((rows, count))
    for start in range(0, rows, _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, rows)
        chunk_points = points if shared else points[start:stop]
        out[start:stop] = _mixture_cdf_rows(
            probs[start:stop],
            tuple(v[start:stop] for v in weights),
            tuple(v[start:stop] for v in means),
            tuple(v[start:stop] for v in scales),
            chunk_points,
        )
    return out.reshape(params.batch_shape + (count,))


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probabilities over the integer alphabet [a_min, a_max] for each site."""

    a_min: int
    a_max: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        size = self.a_max - self.a_min + 1
        if size < 1:
            raise ParameterError(f"Empty alphabet [{self.a_min}, {self.a_max}]")
        if probs.ndim < 1 or probs.shape[-1] != size:
            raise ShapeError(f"Pmf needs a trailing axis of {size}, got {probs.shape}")
        if np.any(probs < 0):
            raise ParameterError("Pmf holds negative probabilities")
        if np.any(np.abs(probs.sum(axis=-1) - 1.0) > _SUM_TOLERANCE):
            raise ParameterError("Pmf does not sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def size(self):
        return self.a_max - self.a_min + 1

    @property
    def batch_shape(self):
        return self.probs.shape[:-1]

    def probability(self, symbol: int, index=()):
        if not self.a_min <= symbol <= self.a_max:
            return 0.0
        return float(self.probs[index][symbol - self.a_min])


def _masses_from_cdf(cdf):
    """Bin masses from CDF values at the interior half-integer boundaries."""
    cdf = np.clip(cdf, 0.0, 1.0)
    cdf = np.maximum.accumulate(cdf, axis=-1)
    zeros = np.zeros(cdf.shape[:-1] + (1,))
    ones = np.ones(cdf.shape[:-1] + (1,))
    return np.diff(np.concatenate([zeros, cdf, ones], axis=-1), axis=-1)


def discretized_pmf(params: GllmmParams, alphabet) -> Pmf:
    """P(s) = c(s + 1/2) - c(s - 1/2), with both tails folded into the edge bins."""
    a_min, a_max = (int(v) for v in alphabet)
    if a_min > a_max:
        raise ParameterError(f"Alphabet bounds {alphabet} are not ordered")
    boundaries = np.arange(a_min, a_max, dtype=np.float64) + 0.5
    if boundaries.size == 0:
        return Pmf(a_min, a_max, np.ones(params.batch_shape + (1,)))
    return Pmf(a_min, a_max, _masses_from_cdf(mixture_cdf(params, boundaries)))


class FactorizedModel:
    """Per-channel piecewise-linear CDF for the hyper-latents.

    Knots sit at every half step over [z_min - 1/2, z_max + 1/2]; the CDF is
    0 at the first knot, 1 at the last and strictly increasing between.
    A model built without knot values is unfitted.
    """

    def __init__(self, z_min: int, z_max: int, cdf: Optional[np.ndarray] = None, channels=None):
        if z_min > z_max:
            raise ParameterError(f"Alphabet bounds ({z_min}, {z_max}) are not ordered")
        self.z_min = int(z_min)
        self.z_max = int(z_max)
        self.knots = self.z_min - 0.5 + 0.5 * np.arange(2 * self.size + 1)
        if cdf is None:
            self.cdf = None
            self.channels = channels or 0
            return

        cdf = np.array(cdf, dtype=np.float64)
        if cdf.ndim != 2 or cdf.shape[1] != self.knots.size:
            raise ShapeError(f"Knot values need shape (channels, {self.knots.size}), got {cdf.shape}")
        if np.any(np.abs(cdf[:, 0]) > 1e-9) or np.any(np.abs(cdf[:, -1] - 1.0) > 1e-9):
            raise ParameterError("Knot values must run from 0 to 1")
        if np.any(np.diff(cdf, axis=1) <= 0):
            raise ParameterError("Knot values must be strictly increasing")
        cdf[:, 0] = 0.0
        cdf[:, -1] = 1.0
        self.cdf = cdf
        self.channels = cdf.shape[0]

    @property
    def size(self):
        return self.z_max - self.z_min + 1

    @property
    def is_fitted(self):
        return self.cdf is not None

    @classmethod
    def from_bin_masses(cls, masses, z_min, z_max) -> FactorizedModel:
        """Knot values from positive per-symbol masses; mass splits evenly within a bin."""
        masses = np.asarray(masses, dtype=np.float64)
        if masses.ndim != 2 or masses.shape[1] != z_max - z_min + 1:
            raise ShapeError(f"Bin masses have shape {masses.shape}")
        if np.any(masses <= 0):
            raise ParameterError("Bin masses must be positive")
        masses = masses / masses.sum(axis=1, keepdims=True)
        edges = np.concatenate([np.zeros((masses.shape[0], 1)), np.cumsum(masses, axis=1)], axis=1)
        cdf = np.empty((masses.shape[0], 2 * masses.shape[1] + 1))
        cdf[:, 0::2] = edges
        cdf[:, 1::2] = 0.5 * (edges[:, :-1] + edges[:, 1:])
        return cls(z_min, z_max, cdf)

    @classmethod
    def from_logits(cls, logits, z_min, z_max) -> FactorizedModel:
        logits = np.asarray(logits, dtype=np.float64)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return cls.from_bin_masses(shifted, z_min, z_max)

    @classmethod
    def uniform(cls, channels, z_min, z_max) -> FactorizedModel:
        return cls.from_bin_masses(np.ones((channels, z_max - z_min + 1)), z_min, z_max)

    def cumulative(self, channel: int, x):
        if not self.is_fitted:
            raise StateError("Factorized model is not fitted")
        return np.interp(x, self.knots, self.cdf[channel])

    def logits(self) -> np.ndarray:
        """Log bin masses, the stored form of the model."""
        return np.log(factorized_pmfs(self).probs)


def factorized_pmf(model: FactorizedModel, channel: int) -> Pmf:
    if model is None or not model.is_fitted:
        raise StateError("Factorized model is not fitted")
    if not 0 <= channel < model.channels:
        raise ParameterError(f"Channel {channel} outside 0..{model.channels - 1}")
    cdf = model.cdf[channel]
    return Pmf(model.z_min, model.z_max, cdf[2::2] - cdf[0:-2:2])


def factorized_pmfs(model: FactorizedModel) -> Pmf:
    """Pmfs of every channel stacked on the leading axis."""
    if model is None or not model.is_fitted:
        raise StateError("Factorized model is not fitted")
    return Pmf(model.z_min, model.z_max, model.cdf[:, 2::2] - model.cdf[:, 0:-2:2])


@dataclass(frozen=True, eq=False)
class SymbolTensor:
    """Integer latents with the number of values clamped into the alphabet."""

    data: np.ndarray
    clamped: int = 0

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.int32))

    @property
    def dims(self):
        return tuple(int(d) for d in self.data.shape)

    @property
    def clamp_rate(self):
        return self.clamped / max(self.data.size, 1)

    def as_real(self) -> RealTensor:
        return RealTensor(self.data.astype(np.float32))


def round_half_away(values):
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def quantize(y: RealTensor, alphabet) -> SymbolTensor:
    """Round half away from zero, then clamp into the alphabet."""
    a_min, a_max = alphabet
    rounded = round_half_away(y.data)
    clamped = int(np.count_nonzero((rounded < a_min) | (rounded > a_max)))
    return SymbolTensor(np.clip(rounded, a_min, a_max).astype(np.int32), clamped)


_NOISE_STEPS = 1 << 24


def add_uniform_noise(y: RealTensor, seed: int) -> RealTensor:
    """Add noise drawn from the open interval (-1/2, 1/2)."""
    rng = np.random.default_rng(seed)
    steps = rng.integers(0, _NOISE_STEPS, size=y.dims)
    noise = (steps + 0.5) / _NOISE_STEPS - 0.5
    return RealTensor(y.data.astype(np.float64) + noise)


def symbol_bits(symbols, pmf: Pmf) -> np.ndarray:
    """Ideal code length of each symbol, with probabilities floored at 2^-16."""
    symbols = np.asarray(symbols)
    if symbols.shape != pmf.batch_shape:
        raise ShapeError(f"Symbols {symbols.shape} do not match pmf batch {pmf.batch_shape}")
    if symbols.size and (symbols.min() < pmf.a_min or symbols.max() > pmf.a_max):
        raise ParameterError(f"Symbol outside alphabet [{pmf.a_min}, {pmf.a_max}]")
    index = (symbols.astype(np.int64) - pmf.a_min)[..., None]
    probs = np.take_along_axis(pmf.probs, index, axis=-1)[..., 0]
    return -np.log2(np.maximum(probs, PMF_FLOOR))


def estimate_rate(symbols, pmf: Pmf) -> float:
    return math.fsum(symbol_bits(symbols, pmf).ravel())


def noisy_likelihood(y_tilde, params: GllmmParams) -> np.ndarray:
    """Mass of the unit interval around each continuous latent."""
    y_tilde = np.asarray(y_tilde, dtype=np.float64)
    if y_tilde.shape != params.batch_shape:
        raise ShapeError(f"Latents {y_tilde.shape} do not match batch {params.batch_shape}")
    points = np.stack([y_tilde - 0.5, y_tilde + 0.5], axis=-1)
    cdf = mixture_cdf(params, points)
    return np.maximum(cdf[..., 1] - cdf[..., 0], 0.0)


def estimate_rate_noisy(y_tilde, params: GllmmParams) -> float:
    likelihood = noisy_likelihood(y_tilde, params)
    return math.fsum((-np.log2(np.maximum(likelihood, PMF_FLOOR))).ravel())


def rd_loss(distortion: float, rate_y: float, rate_z: float, lmbda: float, num_pixels: int) -> float:
    """lambda * D + (R_y + R_z) / pixels."""
    if num_pixels <= 0:
        raise ParameterError(f"Pixel count must be positive, got {num_pixels}")
    if lmbda < 0:
        raise ParameterError(f"Lambda must not be negative, got {lmbda}")
    return lmbda * distortion + (rate_y + rate_z) / num_pixels
