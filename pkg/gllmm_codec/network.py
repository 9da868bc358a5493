"""Analysis, synthesis, hyper and context networks of the codec."""

from __future__ import annotations

from dataclasses import asdict, dataclass
import hashlib
import json
import logging

import numpy as np
from scipy.special import expit, softmax
import voluptuous as vol

from .const import (
    CONTEXT_KERNEL,
    DEFAULT_CRM_STAGES,
    DEFAULT_LAMBDA,
    DEFAULT_LATENT_CHANNELS,
    DEFAULT_MIXTURE_COUNTS,
    DEFAULT_Y_ALPHABET,
    DEFAULT_Z_ALPHABET,
    DOWNSAMPLE_FACTOR,
    FAMILIES,
    HYPER_DOWNSAMPLE_FACTOR,
    SCALE_FLOOR,
    SUPPORTED_CRM_STAGES,
    SUPPORTED_LATENT_CHANNELS,
)
from .entropy import GllmmParams
from .errors import ConfigError, ParameterError, ShapeError, WeightFileError
from .tensor_nn import (
    ConvSpec,
    RealTensor,
    causal_mask,
    conv2d,
    gdn,
    leaky_relu,
    positive,
    softplus,
    tconv2d,
)
from .weight_layout import (
    ANALYSIS_PLAN,
    ATTENTION_BLOCKS,
    CONTEXT_NAME,
    HEAD_NAMES,
    HYPER_ANALYSIS_PLAN,
    HYPER_SYNTHESIS_PLAN,
    SYNTHESIS_PLAN,
    weight_layout,
)
from .weight_store import WeightStore

_LOGGER = logging.getLogger(__name__)


def _ordered_pair(value):
    low, high = value
    if low >= high:
        raise vol.Invalid(f"alphabet bounds {value} are not strictly ordered")
    return value


def _some_component(value):
    if sum(value) < 1:
        raise vol.Invalid("at least one mixture component is required")
    return value


_COUNT = vol.All(int, vol.Range(min=0))
_BOUND = vol.All(int, vol.Range(min=-(2**15), max=2**15 - 1))

MODEL_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required("latent_channels"): vol.In(SUPPORTED_LATENT_CHANNELS),
        vol.Required("hyper_channels"): vol.All(int, vol.Range(min=1)),
        vol.Required("mixture_counts"): vol.All(
            vol.ExactSequence([_COUNT, _COUNT, _COUNT]), _some_component
        ),
        vol.Required("crm_stages"): vol.In(SUPPORTED_CRM_STAGES),
        vol.Required("y_alphabet"): vol.All(vol.ExactSequence([_BOUND, _BOUND]), _ordered_pair),
        vol.Required("z_alphabet"): vol.All(vol.ExactSequence([_BOUND, _BOUND]), _ordered_pair),
        vol.Required("lmbda"): vol.All(vol.Coerce(float), vol.Range(min=0)),
    }
)


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = DEFAULT_LATENT_CHANNELS
    hyper_channels: int = None
    mixture_counts: tuple = DEFAULT_MIXTURE_COUNTS
    crm_stages: int = DEFAULT_CRM_STAGES
    y_alphabet: tuple = DEFAULT_Y_ALPHABET
    z_alphabet: tuple = DEFAULT_Z_ALPHABET
    lmbda: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.hyper_channels is None:
            object.__setattr__(self, "hyper_channels", self.latent_channels)
        for name in ("mixture_counts", "y_alphabet", "z_alphabet"):
            value = getattr(self, name)
            if isinstance(value, list):
                object.__setattr__(self, name, tuple(value))
        try:
            MODEL_CONFIG_SCHEMA(asdict(self))
        except vol.Invalid as err:
            raise ConfigError(f"Invalid model config: {err}") from err
        object.__setattr__(self, "lmbda", float(self.lmbda))

    @property
    def fingerprint(self) -> int:
        """First 8 bytes of the SHA-256 of the canonical config JSON."""
        canonical = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(canonical.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")

    @property
    def params_per_channel(self) -> int:
        return 3 + 3 * sum(self.mixture_counts)

    @property
    def head_channels(self) -> int:
        return self.params_per_channel * self.latent_channels

    def as_dict(self):
        return asdict(self)


def check_weights(w: WeightStore, cfg: ModelConfig) -> None:
    if w.fingerprint != cfg.fingerprint:
        raise WeightFileError(
            f"Weight fingerprint {w.fingerprint:016x} does not match config {cfg.fingerprint:016x}"
        )


def _config_of(w: WeightStore) -> ModelConfig:
    if w.config is None:
        raise WeightFileError("Weight store carries no model config")
    return w.config


def _conv(x, w, name, stride=1, mask=None):
    kernel = w[f"{name}.weight"]
    padding = kernel.shape[-1] // 2
    spec = ConvSpec(kernel, w[f"{name}.bias"], stride=stride, padding=padding, mask=mask)
    return conv2d(x, spec)


def _tconv(x, w, name, stride=2):
    kernel = w[f"{name}.weight"]
    padding = kernel.shape[-1] // 2
    spec = ConvSpec(
        kernel, w[f"{name}.bias"], stride=stride, padding=padding, output_padding=stride - 1
    )
    return tconv2d(x, spec)


def _gdn(x, w, name, inverse=False):
    return gdn(x, positive(w[f"{name}.beta"]), positive(w[f"{name}.gamma"]), inverse=inverse)


def residual_branch(x: RealTensor, w: WeightStore) -> RealTensor:
    h = leaky_relu(_conv(x, w, "conv1"))
    return leaky_relu(_conv(h, w, "conv2"))


def residual_block(x: RealTensor, w: WeightStore) -> RealTensor:
    return x + residual_branch(x, w)


def crm_forward(x: RealTensor, w: WeightStore, stages: int) -> RealTensor:
    """Cascaded residual module.

    An outer shortcut carries x to the output. Each block reads x plus the
    residuals accumulated so far, so the result equals the composition of
    the blocks and is x itself when every weight is zero.
    """
    if stages not in SUPPORTED_CRM_STAGES:
        raise ConfigError(f"Unsupported CRM stage count {stages}")
    residual = None
    for index in range(stages):
        inner = x if residual is None else x + residual
        branch = residual_branch(inner, w.scope(f"block{index}"))
        residual = branch if residual is None else residual + branch
    return x + residual


def attention_forward(x: RealTensor, w: WeightStore) -> RealTensor:
    """Residual attention: x + trunk(x) * sigmoid(mask(x))."""
    trunk = x
    mask = x
    for index in range(ATTENTION_BLOCKS):
        trunk = residual_block(trunk, w.scope(f"trunk.block{index}"))
        mask = residual_block(mask, w.scope(f"mask.block{index}"))
    trunk = _conv(trunk, w, "trunk.out")
    gate = expit(_conv(mask, w, "mask.out").data.astype(np.float64))
    return RealTensor(x.data.astype(np.float64) + trunk.data.astype(np.float64) * gate)


def _run_plan(x, w, plan, stages, inverse):
    for entry in plan:
        name = entry["name"]
        kind = entry["kind"]
        if kind == "down":
            x = _conv(x, w, name, stride=2)
        elif kind == "up":
            x = _tconv(x, w, name)
        elif kind == "crm":
            x = crm_forward(x, w.scope(name), stages)
        elif kind == "attention":
            x = attention_forward(x, w.scope(name))
        if entry.get("gdn"):
            x = _gdn(x, w, f"{name}.gdn", inverse=inverse)
        if entry.get("activation"):
            x = leaky_relu(x)
    return x


def _check_channels(x, expected, what):
    if x.dims[1] != expected:
        raise ShapeError(f"{what} needs {expected} channels, got {x.dims[1]}")


def analysis_transform(x: RealTensor, w: WeightStore) -> RealTensor:
    """Map a normalised image (n, 3, H, W) to latents (n, C_y, H/16, W/16)."""
    cfg = _config_of(w)
    _check_channels(x, 3, "Analysis transform")
    _, _, height, width = x.dims
    if height % DOWNSAMPLE_FACTOR or width % DOWNSAMPLE_FACTOR:
        raise ShapeError(
            f"Image dims {height}x{width} are not multiples of {DOWNSAMPLE_FACTOR}"
        )
    if np.abs(x.data).max() > 1.0:
        raise ParameterError("Analysis input must lie in [-1, 1]")
    return _run_plan(x, w, ANALYSIS_PLAN, cfg.crm_stages, inverse=False)


def synthesis_transform(y_hat: RealTensor, w: WeightStore) -> RealTensor:
    cfg = _config_of(w)
    _check_channels(y_hat, cfg.latent_channels, "Synthesis transform")
    return _run_plan(y_hat, w, SYNTHESIS_PLAN, cfg.crm_stages, inverse=True)


def hyper_analysis(y: RealTensor, w: WeightStore) -> RealTensor:
    cfg = _config_of(w)
    _check_channels(y, cfg.latent_channels, "Hyper analysis")
    _, _, height, width = y.dims
    if height % HYPER_DOWNSAMPLE_FACTOR or width % HYPER_DOWNSAMPLE_FACTOR:
        raise ShapeError(
            f"Latent dims {height}x{width} are not multiples of {HYPER_DOWNSAMPLE_FACTOR}"
        )
    return _run_plan(y, w, HYPER_ANALYSIS_PLAN, cfg.crm_stages, inverse=False)


def hyper_synthesis(z_hat: RealTensor, w: WeightStore) -> RealTensor:
    cfg = _config_of(w)
    _check_channels(z_hat, cfg.hyper_channels, "Hyper synthesis")
    return _run_plan(z_hat, w, HYPER_SYNTHESIS_PLAN, cfg.crm_stages, inverse=False)


def context_model(y_hat: RealTensor, w: WeightStore) -> RealTensor:
    """Masked 5x5 convolution; output at a site sees only earlier sites."""
    cfg = _config_of(w)
    _check_channels(y_hat, cfg.latent_channels, "Context model")
    return _conv(y_hat, w, CONTEXT_NAME, mask="A")


class ContextTaps:
    """The causal taps of the context kernel, for site-by-site coding."""

    def __init__(self, w: WeightStore):
        kernel = np.asarray(w[f"{CONTEXT_NAME}.weight"], dtype=np.float64)
        mask = causal_mask(CONTEXT_KERNEL, CONTEXT_KERNEL)
        half = CONTEXT_KERNEL // 2
        self.offsets = [(a - half, b - half) for a, b in zip(*np.nonzero(mask))]
        self.matrices = [kernel[:, :, a + half, b + half] for a, b in self.offsets]
        self.bias = np.asarray(w[f"{CONTEXT_NAME}.bias"], dtype=np.float64)

    def at_site(self, symbols: np.ndarray, row: int, col: int) -> RealTensor:
        """Context vector at (row, col) of a (C, h, w) latent array."""
        _, height, width = symbols.shape
        acc = self.bias.copy()
        for (dr, dc), matrix in zip(self.offsets, self.matrices):
            r = row + dr
            c = col + dc
            if 0 <= r < height and 0 <= c < width:
                acc += matrix @ symbols[:, r, c].astype(np.float64)
        return RealTensor(acc.reshape(1, -1, 1, 1))


def split_head_output(raw: np.ndarray, cfg: ModelConfig) -> GllmmParams:
    """Turn head output (n, P*C, h, w) into per-site mixture parameters."""
    n, channels, height, width = raw.shape
    per = cfg.params_per_channel
    if channels != per * cfg.latent_channels:
        raise ShapeError(f"Head output has {channels} channels, expected {per * cfg.latent_channels}")
    values = raw.astype(np.float64).reshape(n, cfg.latent_channels, per, height, width)
    values = np.moveaxis(values, 2, -1)  # (n, C, h, w, P)

    family_logits = values[..., :3].copy()
    weights, means, scales = [], [], []
    offset = 3
    for index, count in enumerate(cfg.mixture_counts):
        if count == 0:
            family_logits[..., index] = -np.inf
            empty = np.zeros(values.shape[:-1] + (0,))
            weights.append(empty)
            means.append(empty)
            scales.append(empty)
            continue
        weights.append(softmax(values[..., offset : offset + count], axis=-1))
        means.append(values[..., offset + count : offset + 2 * count])
        scales.append(softplus(values[..., offset + 2 * count : offset + 3 * count]) + SCALE_FLOOR)
        offset += 3 * count

    probs = softmax(family_logits, axis=-1)
    return GllmmParams(probs, tuple(weights), tuple(means), tuple(scales))


def entropy_parameters(
    ctx: RealTensor, hyper: RealTensor, w: WeightStore, cfg: ModelConfig
) -> GllmmParams:
    """Three 1x1 convolutions over [ctx, hyper], split into mixtures."""
    check_weights(w, cfg)
    expected = 2 * cfg.latent_channels
    _check_channels(ctx, expected, "Context features")
    _check_channels(hyper, expected, "Hyper features")
    if ctx.dims != hyper.dims:
        raise ShapeError(f"Context dims {ctx.dims} do not match hyper dims {hyper.dims}")

    x = RealTensor(np.concatenate([ctx.data, hyper.data], axis=1))
    for index, name in enumerate(HEAD_NAMES):
        x = _conv(x, w, name)
        if index < len(HEAD_NAMES) - 1:
            x = leaky_relu(x)
    return split_head_output(x.data, cfg)


def zero_weights(cfg: ModelConfig) -> WeightStore:
    """A store with every tensor zero; GDN parameters stay valid."""
    return WeightStore(
        {name: np.zeros(dims, dtype=np.float32) for name, dims in weight_layout(cfg).items()},
        cfg.fingerprint,
        cfg,
    )


def describe(cfg: ModelConfig) -> str:
    counts = dict(zip(FAMILIES, cfg.mixture_counts))
    return (
        f"C_y={cfg.latent_channels} C_z={cfg.hyper_channels} crm={cfg.crm_stages} "
        f"mixture={counts} lambda={cfg.lmbda}"
    )
