"""Dense tensors and the forward kernels the networks are built from."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Optional

import numpy as np

from .const import GDN_FLOOR, LEAKY_RELU_SLOPE
from .errors import ParameterError, ShapeError

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class RealTensor:
    """A 4-D (batch, channel, height, width) single precision tensor."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 4:
            raise ShapeError(f"RealTensor needs 4 dims, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeError(f"RealTensor dims must be >= 1, got {data.shape}")
        if not np.isfinite(data).all():
            raise ParameterError("RealTensor holds non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def dims(self):
        return tuple(int(d) for d in self.data.shape)

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros(dims, dtype=np.float32))

    def __add__(self, other: RealTensor) -> RealTensor:
        if self.dims != other.dims:
            raise ShapeError(f"Cannot add {self.dims} and {other.dims}")
        return RealTensor(self.data + other.data)

    def __eq__(self, other):
        if not isinstance(other, RealTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    __hash__ = None


def causal_mask(kh: int, kw: int) -> np.ndarray:
    """Mask A: keep taps strictly before the centre in raster order."""
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"Masked kernels need odd sizes, got {kh}x{kw}")
    mask = np.ones((kh, kw), dtype=np.float32)
    mask[kh // 2, kw // 2 :] = 0
    mask[kh // 2 + 1 :, :] = 0
    return mask


@dataclass(frozen=True)
class ConvSpec:
    kernel: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    mask: Optional[str] = None

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float32)
        if kernel.ndim != 4:
            raise ShapeError(f"Kernel needs 4 dims, got shape {kernel.shape}")
        if self.stride < 1:
            raise ShapeError(f"Stride must be positive, got {self.stride}")
        if self.padding < 0 or self.output_padding < 0:
            raise ShapeError("Padding must not be negative")
        if self.mask not in (None, "A"):
            raise ParameterError(f"Unknown mask type {self.mask}")
        if self.mask == "A":
            kernel = kernel * causal_mask(kernel.shape[2], kernel.shape[3])
        object.__setattr__(self, "kernel", kernel)

        bias = self.bias
        if bias is None:
            bias = np.zeros(kernel.shape[0], dtype=np.float32)
        bias = np.asarray(bias, dtype=np.float32)
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(
                f"Bias shape {bias.shape} does not match {kernel.shape[0]} output channels"
            )
        object.__setattr__(self, "bias", bias)

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    @property
    def in_channels(self):
        return self.kernel.shape[1]


def _correlate(data, kernel, bias, stride, pads):
    """Cross-correlate in double precision, return float32 output."""
    top, bottom, left, right = pads
    padded = np.pad(
        np.asarray(data, dtype=np.float64),
        ((0, 0), (0, 0), (top, bottom), (left, right)),
    )
    _, _, hp, wp = padded.shape
    _, _, kh, kw = kernel.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if hp < kh or wp < kw or ho < 1 or wo < 1:
        raise ShapeError(
            f"Padded input {hp}x{wp} too small for a {kh}x{kw} kernel at stride {stride}"
        )

    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    out = np.tensordot(windows, kernel.astype(np.float64), axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias.astype(np.float64)[None, :, None, None]
    return out.astype(np.float32)


def conv2d(x: RealTensor, spec: ConvSpec) -> RealTensor:
    channels = x.dims[1]
    if spec.in_channels != channels:
        raise ShapeError(
            f"Kernel expects {spec.in_channels} input channels, tensor has {channels}"
        )
    p = spec.padding
    return RealTensor(_correlate(x.data, spec.kernel, spec.bias, spec.stride, (p, p, p, p)))


def tconv2d(x: RealTensor, spec: ConvSpec) -> RealTensor:
    """Transposed convolution, the adjoint of conv2d with the same kernel.

    The kernel keeps the (out_ch, in_ch, kh, kw) layout where in_ch matches
    the channels of x. Output size is (h - 1) * stride - 2 * padding + kh
    + output_padding.
    """
    n, channels, h, w = x.dims
    if spec.in_channels != channels:
        raise ShapeError(
            f"Kernel expects {spec.in_channels} input channels, tensor has {channels}"
        )
    s = spec.stride
    _, _, kh, kw = spec.kernel.shape
    pad_top = kh - 1 - spec.padding
    pad_left = kw - 1 - spec.padding
    if pad_top < 0 or pad_left < 0:
        raise ShapeError(f"Padding {spec.padding} too large for a {kh}x{kw} kernel")

    dilated = np.zeros((n, channels, (h - 1) * s + 1, (w - 1) * s + 1), dtype=np.float32)
    dilated[:, :, ::s, ::s] = x.data
    flipped = spec.kernel[:, :, ::-1, ::-1]
    pads = (
        pad_top,
        pad_top + spec.output_padding,
        pad_left,
        pad_left + spec.output_padding,
    )
    return RealTensor(_correlate(dilated, flipped, spec.bias, 1, pads))


def leaky_relu(x: RealTensor, slope: float = LEAKY_RELU_SLOPE) -> RealTensor:
    return RealTensor(np.maximum(x.data, np.float32(slope) * x.data))


def gdn(x: RealTensor, beta, gamma, inverse: bool = False) -> RealTensor:
    """Divisive normalisation y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2).

    With inverse set the normaliser multiplies instead.
    """
    channels = x.dims[1]
    beta = np.asarray(beta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if beta.shape != (channels,) or gamma.shape != (channels, channels):
        raise ShapeError(
            f"GDN parameters {beta.shape}/{gamma.shape} do not fit {channels} channels"
        )
    if np.any(beta <= 0):
        raise ParameterError("GDN beta must be positive")
    if np.any(gamma < 0):
        raise ParameterError("GDN gamma must not be negative")

    values = x.data.astype(np.float64)
    norm = np.einsum("ij,njhw->nihw", gamma, values * values)
    norm = np.sqrt(norm + beta[None, :, None, None])
    out = values * norm if inverse else values / norm
    return RealTensor(out.astype(np.float32))


def softplus(raw):
    return np.logaddexp(0.0, np.asarray(raw, dtype=np.float64))


def positive(raw, floor: float = GDN_FLOOR):
    """Map unconstrained stored values onto (floor, inf)."""
    return softplus(raw) + floor
