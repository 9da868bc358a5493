"""Maximum-likelihood fits of discretised mixtures to integer samples."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, softmax
import voluptuous as vol

from .const import (
    CSV_ABLATION_HEADER,
    DEFAULT_FIT_SEED,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_MIXTURE_COUNTS,
    DEFAULT_RESTARTS,
    DEFAULT_STEP_SIZE,
    DEFAULT_TOLERANCE,
    FAMILIES,
    FAMILY_CONFIGS,
    FIT_METHODS,
    MIN_FIT_SAMPLES,
    SAMPLE_DTYPE,
    SCALE_FLOOR,
    SOURCE_GENERATORS,
)
from .entropy import (
    FactorizedModel,
    GllmmParams,
    discretized_pmf,
    interval_mass,
    round_half_away,
    standard_pdf,
)
from .errors import ConfigError, ParameterError
from .tensor_nn import softplus

_LOGGER = logging.getLogger(__name__)

_LN2 = math.log(2.0)
_PROB_FLOOR = 1e-300
_SPIKE_SCALE = 1e-3
_ABSENT_LOGIT = math.log(1e-4)

# Ratio of each family's scale parameter to the standard deviation.
_SCALE_PER_STD = {
    "gaussian": 1.0,
    "laplacian": 1.0 / math.sqrt(2.0),
    "logistic": math.sqrt(3.0) / math.pi,
}

FIT_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required("counts"): vol.ExactSequence(
            [vol.All(int, vol.Range(min=0))] * len(FAMILIES)
        ),
        vol.Required("restarts"): vol.All(int, vol.Range(min=1)),
        vol.Required("max_iterations"): vol.All(int, vol.Range(min=1)),
        vol.Required("step_size"): vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False)),
        vol.Required("seed"): vol.All(int, vol.Range(min=0)),
        vol.Required("tolerance"): vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False)),
        vol.Required("method"): vol.In(FIT_METHODS),
        vol.Required("workers"): vol.All(int, vol.Range(min=1)),
    }
)


@dataclass(frozen=True)
class FitConfig:
    counts: tuple = DEFAULT_MIXTURE_COUNTS
    restarts: int = DEFAULT_RESTARTS
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    step_size: float = DEFAULT_STEP_SIZE
    seed: int = DEFAULT_FIT_SEED
    tolerance: float = DEFAULT_TOLERANCE
    method: str = FIT_METHODS[0]
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(self.counts))
        try:
            FIT_CONFIG_SCHEMA(
                {
                    "counts": self.counts,
                    "restarts": self.restarts,
                    "max_iterations": self.max_iterations,
                    "step_size": self.step_size,
                    "seed": self.seed,
                    "tolerance": self.tolerance,
                    "method": self.method,
                    "workers": self.workers,
                }
            )
        except vol.Invalid as err:
            raise ConfigError(f"Invalid fit config: {err}") from err
        if sum(self.counts) < 1:
            raise ConfigError("At least one mixture component is required")

    def with_counts(self, counts) -> FitConfig:
        return FitConfig(
            counts,
            self.restarts,
            self.max_iterations,
            self.step_size,
            self.seed,
            self.tolerance,
            self.method,
            self.workers,
        )


@dataclass(frozen=True)
class FitResult:
    params: GllmmParams
    bits_per_symbol: float
    iterations: int
    restart: int
    alphabet: tuple
    history: tuple = field(default=(), repr=False)

    def probability(self, symbol: int) -> float:
        return discretized_pmf(self.params, self.alphabet).probability(symbol)


class _Parameterization:
    """Unconstrained vector: family logits, then per family weight logits, means, raw scales."""

    def __init__(self, counts):
        self.counts = tuple(counts)
        self.present = [index for index, count in enumerate(self.counts) if count]
        self.size = len(self.present) + 3 * sum(self.counts)

    def unpack(self, theta):
        family_logits = theta[: len(self.present)]
        offset = len(self.present)
        blocks = []
        for index in self.present:
            count = self.counts[index]
            blocks.append(
                (
                    theta[offset : offset + count],
                    theta[offset + count : offset + 2 * count],
                    theta[offset + 2 * count : offset + 3 * count],
                )
            )
            offset += 3 * count
        return family_logits, blocks

    def pack(self, family_logits, blocks):
        parts = [np.asarray(family_logits, dtype=np.float64)]
        for weight_logits, means, raw_scales in blocks:
            parts.extend([weight_logits, means, raw_scales])
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])

    def to_params(self, theta) -> GllmmParams:
        family_logits, blocks = self.unpack(theta)
        probs = np.zeros(len(FAMILIES))
        probs[self.present] = softmax(family_logits)
        weights, means, scales = [], [], []
        by_family = dict(zip(self.present, blocks))
        for index in range(len(FAMILIES)):
            if index not in by_family:
                weights.append(np.zeros(0))
                means.append(np.zeros(0))
                scales.append(np.zeros(0))
                continue
            weight_logits, mu, raw = by_family[index]
            weights.append(softmax(weight_logits))
            means.append(np.array(mu))
            scales.append(softplus(raw) + SCALE_FLOOR)
        return GllmmParams.single(probs, weights, means, scales)

    def from_params(self, params: GllmmParams):
        """Map fitted parameters of a subset of the families into this vector."""
        family_logits = []
        blocks = []
        for index in self.present:
            count = self.counts[index]
            if params.counts[index] == count:
                family_logits.append(math.log(max(params.probs[index], 1e-12)))
                blocks.append(
                    (
                        np.log(np.maximum(params.weights[index], 1e-12)),
                        params.means[index],
                        _raw_scale(params.scales[index]),
                    )
                )
            elif params.counts[index] == 0:
                family_logits.append(_ABSENT_LOGIT)
                spread = max(float(s.max()) for s in params.scales if s.size)
                centre = sum(
                    float(p * (w @ m))
                    for p, w, m in zip(params.probs, params.weights, params.means)
                    if w.size
                )
                blocks.append(
                    (np.zeros(count), np.full(count, centre), _raw_scale(np.full(count, spread)))
                )
            else:
                return None
        return self.pack(family_logits, blocks)


def _raw_scale(scale):
    scale = np.maximum(np.asarray(scale, dtype=np.float64) - SCALE_FLOOR, 1e-6)
    # inverse softplus, stable for large scales
    return scale + np.log(-np.expm1(-scale))


class _HistogramObjective:
    """Mean -log2 P(sample) over a histogram, with its analytic gradient."""

    def __init__(self, values, counts, alphabet, layout: _Parameterization):
        a_min, a_max = alphabet
        self.values = values.astype(np.float64)
        self.weights = counts.astype(np.float64) / counts.sum()
        self.lower = np.where(values == a_min, -np.inf, self.values - 0.5)
        self.upper = np.where(values == a_max, np.inf, self.values + 0.5)
        self.layout = layout

    def __call__(self, theta):
        family_logits, blocks = self.layout.unpack(theta)
        probs = softmax(family_logits)
        terms = []
        total = np.zeros_like(self.values)
        for slot, index in enumerate(self.layout.present):
            family = FAMILIES[index]
            weight_logits, mu, raw = blocks[slot]
            w = softmax(weight_logits)
            sigma = softplus(raw) + SCALE_FLOOR
            z_lo = (self.lower[None, :] - mu[:, None]) / sigma[:, None]
            z_hi = (self.upper[None, :] - mu[:, None]) / sigma[:, None]
            mass = interval_mass(family, z_lo, z_hi)
            mix = w @ mass
            total += probs[slot] * mix
            terms.append((w, sigma, raw, z_lo, z_hi, mass, mix))

        total = np.maximum(total, _PROB_FLOOR)
        loss = -float(np.dot(self.weights, np.log2(total)))
        g = -self.weights / (_LN2 * total)

        family_grad = np.array([term[6] @ g for term in terms])
        grad_logits = probs * (family_grad - probs @ family_grad)
        grad_blocks = []
        for slot, index in enumerate(self.layout.present):
            family = FAMILIES[index]
            w, sigma, raw, z_lo, z_hi, mass, _ = terms[slot]
            pdf_lo = standard_pdf(family, z_lo)
            pdf_hi = standard_pdf(family, z_hi)
            with np.errstate(invalid="ignore"):
                zpdf_lo = np.where(np.isfinite(z_lo), z_lo * pdf_lo, 0.0)
                zpdf_hi = np.where(np.isfinite(z_hi), z_hi * pdf_hi, 0.0)

            h = probs[slot] * (mass @ g)
            grad_w = w * (h - w @ h)
            scale = probs[slot] * w / sigma
            grad_mu = scale * ((pdf_lo - pdf_hi) @ g)
            grad_sigma = scale * ((zpdf_lo - zpdf_hi) @ g)
            grad_blocks.append((grad_w, grad_mu, grad_sigma * expit(raw)))
        return loss, self.layout.pack(grad_logits, grad_blocks)


def _initial_theta(layout, centre, spread, restart, seed):
    rng = np.random.default_rng([seed, restart]) if restart else None
    family_logits = np.zeros(len(layout.present))
    blocks = []
    for index in layout.present:
        count = layout.counts[index]
        base = spread * _SCALE_PER_STD[FAMILIES[index]]
        if rng is None:
            factors = 4.0 ** np.linspace(-1.0, 1.0, count) if count > 1 else np.ones(1)
            blocks.append((np.zeros(count), np.full(count, centre), _raw_scale(base * factors)))
        else:
            blocks.append(
                (
                    rng.normal(0.0, 0.5, count),
                    centre + rng.normal(0.0, 0.5 * spread, count),
                    _raw_scale(base * np.exp(rng.normal(0.0, 0.7, count))),
                )
            )
    if rng is not None:
        family_logits = rng.normal(0.0, 0.5, len(layout.present))
    return layout.pack(family_logits, blocks)


def _lbfgs(objective, theta, cfg, history):
    def record(xk):
        history.append(objective(xk)[0])

    result = minimize(
        objective,
        theta,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": cfg.max_iterations, "ftol": cfg.tolerance, "gtol": 1e-10},
    )
    return result.x, float(result.fun), int(result.nit)


def _adam(objective, theta, cfg, history):
    """Adam steps; a step that raises the loss is rejected and the rate halved."""
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    loss, grad = objective(theta)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    rate = cfg.step_size
    iterations = 0
    for step in range(1, cfg.max_iterations + 1):
        iterations = step
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        update = (m / (1 - beta1**step)) / (np.sqrt(v / (1 - beta2**step)) + eps)
        candidate = theta - rate * update
        candidate_loss, candidate_grad = objective(candidate)
        if np.isfinite(candidate_loss) and candidate_loss <= loss:
            improvement = loss - candidate_loss
            theta, loss, grad = candidate, candidate_loss, candidate_grad
            history.append(loss)
            if improvement < cfg.tolerance:
                break
        else:
            rate *= 0.5
            if rate < 1e-10:
                break
    return theta, loss, iterations


def _run_restart(objective, theta0, cfg):
    history = []
    start_loss = objective(theta0)[0]
    optimizer = _lbfgs if cfg.method == "l-bfgs-b" else _adam
    theta, loss, iterations = optimizer(objective, theta0, cfg, history)
    if not np.isfinite(loss) or loss > start_loss:
        theta, loss = theta0, start_loss
    return theta, loss, iterations, tuple(history)


def _histogram(samples, alphabet):
    samples = np.asarray(samples)
    if samples.size < MIN_FIT_SAMPLES:
        raise ParameterError(f"Need at least {MIN_FIT_SAMPLES} samples, got {samples.size}")
    if not np.all(samples == np.round(samples)):
        raise ParameterError("Samples must be integers")
    samples = samples.astype(np.int64).ravel()
    if alphabet is None:
        alphabet = (int(samples.min()), int(samples.max()))
    a_min, a_max = alphabet
    if samples.min() < a_min or samples.max() > a_max:
        raise ParameterError(f"Samples fall outside the alphabet [{a_min}, {a_max}]")
    values, counts = np.unique(samples, return_counts=True)
    return samples, (int(a_min), int(a_max)), values, counts


def _spike_fit(value, cfg, alphabet):
    weights, means, scales = [], [], []
    for count in cfg.counts:
        weights.append(np.full(count, 1.0 / count) if count else np.zeros(0))
        means.append(np.full(count, float(value)))
        scales.append(np.full(count, _SPIKE_SCALE))
    present = np.array([1.0 if c else 0.0 for c in cfg.counts])
    params = GllmmParams.single(present / present.sum(), weights, means, scales)
    pmf = discretized_pmf(params, alphabet)
    bits = -math.log2(max(pmf.probability(int(value)), _PROB_FLOOR))
    return FitResult(params, max(bits, 0.0), 0, 0, alphabet)


def fit_mixture(
    samples, cfg: FitConfig, alphabet=None, warm_starts: Sequence[GllmmParams] = ()
) -> FitResult:
    """Fit one shared mixture to integer samples by minimising bits per symbol.

    Restart 0 starts from the sample median with spread scales, later
    restarts from seeded perturbations. warm_starts are fitted parameters
    of nested family sets, tried as extra restarts.
    """
    samples, alphabet, values, counts = _histogram(samples, alphabet)
    if values.size == 1:
        return _spike_fit(values[0], cfg, alphabet)

    layout = _Parameterization(cfg.counts)
    objective = _HistogramObjective(values, counts, alphabet, layout)
    centre = float(np.median(samples))
    spread = max(float(np.std(samples)), 0.5)

    starts = [_initial_theta(layout, centre, spread, r, cfg.seed) for r in range(cfg.restarts)]
    for params in warm_starts:
        theta = layout.from_params(params)
        if theta is not None:
            starts.append(theta)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        runs = list(pool.map(lambda theta: _run_restart(objective, theta, cfg), starts))

    best = min(range(len(runs)), key=lambda r: (runs[r][1], r))
    theta, loss, iterations, history = runs[best]
    result = FitResult(
        layout.to_params(theta), max(loss, 0.0), iterations, best, alphabet, history
    )
    _LOGGER.debug(
        "Fitted counts %s: %.5f bits/symbol after %d iterations (restart %d)",
        cfg.counts,
        result.bits_per_symbol,
        iterations,
        best,
    )
    return result


def fit_factorized(samples_per_channel, alphabet) -> FactorizedModel:
    """Per-channel frequencies with +1 smoothing, integrated into knot values."""
    z_min, z_max = (int(v) for v in alphabet)
    size = z_max - z_min + 1
    masses = np.ones((len(samples_per_channel), size))
    for channel, samples in enumerate(samples_per_channel):
        samples = np.asarray(samples, dtype=np.int64).ravel()
        if samples.size == 0:
            _LOGGER.warning("Channel %d has no samples, using a uniform model", channel)
            continue
        if samples.min() < z_min or samples.max() > z_max:
            raise ParameterError(f"Channel {channel} has samples outside [{z_min}, {z_max}]")
        masses[channel] += np.bincount(samples - z_min, minlength=size)
    return FactorizedModel.from_bin_masses(masses, z_min, z_max)


def generate_source(name: str, n: int, seed: int) -> np.ndarray:
    """Draw n integer samples from a named source."""
    try:
        components = SOURCE_GENERATORS[name]["components"]
    except KeyError as err:
        raise ConfigError(f"Unknown source {name}") from err
    rng = np.random.default_rng(seed)
    weights = np.array([c["weight"] for c in components], dtype=np.float64)
    choice = rng.choice(len(components), size=n, p=weights / weights.sum())
    values = np.empty(n)
    for index, component in enumerate(components):
        picked = choice == index
        size = int(picked.sum())
        loc, scale = component["loc"], component["scale"]
        if component["family"] == "gaussian":
            values[picked] = rng.normal(loc, scale, size)
        elif component["family"] == "laplacian":
            values[picked] = rng.laplace(loc, scale, size)
        else:
            values[picked] = rng.logistic(loc, scale, size)
    return round_half_away(values).astype(np.int64)


def empirical_entropy(samples) -> float:
    _, counts = np.unique(np.asarray(samples), return_counts=True)
    probs = counts / counts.sum()
    return float(-(probs * np.log2(probs)).sum())


def _nested(subset, superset):
    return subset != superset and all(
        small == 0 or small == large for small, large in zip(subset, superset)
    )


def ablation_run(
    source: str,
    families: Sequence[str],
    n_samples: int,
    seed: int,
    cfg: Optional[FitConfig] = None,
    output=None,
) -> list:
    """Fit every family set on the same samples and report bits per symbol.

    Family sets are fitted smallest first; each fit also starts from the
    results of the sets it contains.
    """
    unknown = [name for name in families if name not in FAMILY_CONFIGS]
    if unknown:
        raise ConfigError(f"Unknown family {unknown[0]}")
    cfg = cfg or FitConfig(seed=seed)
    samples = generate_source(source, n_samples, seed)
    _LOGGER.info("Ablation on %d %s samples (seed %d)", n_samples, source, seed)

    fitted = {}
    for name in sorted(families, key=lambda n: (sum(FAMILY_CONFIGS[n]["counts"]), n)):
        counts = tuple(FAMILY_CONFIGS[name]["counts"])
        warm = [
            fitted[other].params
            for other in fitted
            if _nested(tuple(FAMILY_CONFIGS[other]["counts"]), counts)
        ]
        fitted[name] = fit_mixture(samples, cfg.with_counts(counts), warm_starts=warm)
        _LOGGER.info("%s: %.5f bits/symbol", name, fitted[name].bits_per_symbol)

    rows = []
    for name in families:
        k, m, n = FAMILY_CONFIGS[name]["counts"]
        rows.append(
            {
                "family": name,
                "K": k,
                "M": m,
                "N": n,
                "bits_per_symbol": fitted[name].bits_per_symbol,
                "n_samples": n_samples,
                "seed": seed,
            }
        )
    if output is not None:
        write_ablation_csv(output, rows)
    return rows


def write_ablation_csv(output, rows) -> None:
    with open(output, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_ABLATION_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def write_samples(path, samples) -> None:
    np.asarray(samples).astype(SAMPLE_DTYPE).tofile(Path(path))


def read_samples(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as err:
        raise ParameterError(f"Cannot read samples from {path}: {err}") from err
    if len(data) % 4:
        raise ParameterError(f"Sample file {path} is not a whole number of i32 values")
    return np.frombuffer(data, dtype=SAMPLE_DTYPE).astype(np.int64)
