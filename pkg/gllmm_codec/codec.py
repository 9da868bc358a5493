"""Image compression and decompression through the learned networks."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import struct
from typing import Optional
import zlib

import numpy as np

from .coder import RangeDecoder, RangeEncoder, build_tables, decode_stream, encode_stream
from .const import (
    BITSTREAM_MAGIC,
    BITSTREAM_VERSION,
    CLAMP_WARNING_RATE,
    DOWNSAMPLE_FACTOR,
    HYPER_DOWNSAMPLE_FACTOR,
    PAD_MULTIPLE,
)
from .entropy import FactorizedModel, SymbolTensor, discretized_pmf, factorized_pmfs, quantize
from .errors import BitstreamError, DecodeError, ShapeError, WeightFileError
from .network import (
    ContextTaps,
    ModelConfig,
    analysis_transform,
    check_weights,
    entropy_parameters,
    hyper_analysis,
    hyper_synthesis,
    synthesis_transform,
)
from .tensor_nn import RealTensor
from .weight_layout import FACTORIZED_NAME
from .weight_store import WeightStore

_LOGGER = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sBIIBQhhhh")
_LENGTH = struct.Struct("<I")
_CRC = struct.Struct("<I")


@dataclass(frozen=True)
class Bitstream:
    width: int
    height: int
    channels: int
    fingerprint: int
    y_alphabet: tuple
    z_alphabet: tuple
    z_payload: bytes
    y_payload: bytes

    def to_bytes(self) -> bytes:
        body = b"".join(
            [
                _HEADER.pack(
                    BITSTREAM_MAGIC,
                    BITSTREAM_VERSION,
                    self.width,
                    self.height,
                    self.channels,
                    self.fingerprint,
                    *self.y_alphabet,
                    *self.z_alphabet,
                ),
                _LENGTH.pack(len(self.z_payload)),
                self.z_payload,
                _LENGTH.pack(len(self.y_payload)),
                self.y_payload,
            ]
        )
        return body + _CRC.pack(zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> Bitstream:
        data = bytes(data)
        if len(data) < _HEADER.size + 2 * _LENGTH.size + _CRC.size:
            raise BitstreamError("Bitstream is truncated")
        body = data[: -_CRC.size]
        (crc,) = _CRC.unpack(data[-_CRC.size :])
        if zlib.crc32(body) != crc:
            raise BitstreamError("Bitstream checksum mismatch")

        fields = _HEADER.unpack_from(body, 0)
        magic, version, width, height, channels, fingerprint = fields[:6]
        if magic != BITSTREAM_MAGIC:
            raise BitstreamError(f"Not a bitstream, magic {magic!r}")
        if version != BITSTREAM_VERSION:
            raise BitstreamError(f"Unsupported bitstream version {version}")
        if width < 1 or height < 1 or channels != 3:
            raise BitstreamError(f"Bad image dims {width}x{height}x{channels}")

        offset = _HEADER.size
        payloads = []
        for _ in range(2):
            if offset + _LENGTH.size > len(body):
                raise BitstreamError("Bitstream is truncated")
            (length,) = _LENGTH.unpack_from(body, offset)
            offset += _LENGTH.size
            if offset + length > len(body):
                raise BitstreamError("Payload runs past the end of the bitstream")
            payloads.append(body[offset : offset + length])
            offset += length
        if offset != len(body):
            raise BitstreamError(f"Bitstream has {len(body) - offset} trailing bytes")

        return cls(
            width,
            height,
            channels,
            fingerprint,
            tuple(fields[6:8]),
            tuple(fields[8:10]),
            payloads[0],
            payloads[1],
        )

    @property
    def num_bytes(self):
        return len(self.to_bytes())

    @property
    def bpp(self):
        return 8 * self.num_bytes / (self.width * self.height)


def _check_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"Expected an (H, W, 3) image, got {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ShapeError(f"Image dims must be >= 1, got {image.shape}")
    if image.dtype != np.uint8:
        raise ShapeError(f"Expected 8-bit samples, got {image.dtype}")
    return image


def padded_dims(height: int, width: int):
    def up(value):
        return -(-value // PAD_MULTIPLE) * PAD_MULTIPLE

    return up(height), up(width)


def to_tensor(image: np.ndarray) -> RealTensor:
    """Replicate-pad to multiples of 64 and map samples onto [-1, 1]."""
    height, width, _ = image.shape
    p_height, p_width = padded_dims(height, width)
    padded = np.pad(image, ((0, p_height - height), (0, p_width - width), (0, 0)), mode="edge")
    values = padded.astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    return RealTensor(values.transpose(2, 0, 1)[None])


def to_image(x_hat: RealTensor, height: int, width: int) -> np.ndarray:
    values = (x_hat.data[0].astype(np.float64) + 1.0) * 127.5
    values = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(values.transpose(1, 2, 0)[:height, :width])


def factorized_model(w: WeightStore, cfg: ModelConfig) -> FactorizedModel:
    z_min, z_max = cfg.z_alphabet
    return FactorizedModel.from_logits(w[FACTORIZED_NAME], z_min, z_max)


def hyper_tables(w: WeightStore, cfg: ModelConfig, z_dims) -> list:
    """One table per hyper-latent, channel-major like the flattened tensor."""
    per_channel = build_tables(factorized_pmfs(factorized_model(w, cfg)))
    _, channels, height, width = z_dims
    return [per_channel[c] for c in range(channels) for _ in range(height * width)]


class SiteModel:
    """Per-site tables of the latents, shared by the encoder and the decoder.

    The tables at a site depend only on the hyper features and on the
    latents already coded in raster order.
    """

    def __init__(self, hyper: RealTensor, w: WeightStore, cfg: ModelConfig):
        self.hyper = hyper.data
        self.weights = w
        self.cfg = cfg
        self.taps = ContextTaps(w)

    def tables(self, symbols: np.ndarray, row: int, col: int) -> list:
        ctx = self.taps.at_site(symbols, row, col)
        hyper = RealTensor(self.hyper[:, :, row : row + 1, col : col + 1])
        params = entropy_parameters(ctx, hyper, self.weights, self.cfg)
        return build_tables(discretized_pmf(params, self.cfg.y_alphabet))


def _warn_on_clamping(name, symbols):
    if symbols.clamp_rate > CLAMP_WARNING_RATE:
        _LOGGER.warning(
            "%.1f%% of %s values were clamped into the alphabet", 100 * symbols.clamp_rate, name
        )


@dataclass(frozen=True)
class Latents:
    y_hat: SymbolTensor
    z_hat: SymbolTensor
    hyper: RealTensor


def analyse(image, w: WeightStore, cfg: ModelConfig) -> Latents:
    """Quantised latents, hyper-latents and hyper features of an image."""
    image = _check_image(image)
    check_weights(w, cfg)
    y = analysis_transform(to_tensor(image), w)
    y_hat = quantize(y, cfg.y_alphabet)
    z_hat = quantize(hyper_analysis(y, w), cfg.z_alphabet)
    _warn_on_clamping("y", y_hat)
    _warn_on_clamping("z", z_hat)
    return Latents(y_hat, z_hat, hyper_synthesis(z_hat.as_real(), w))


def compress(
    image, w: WeightStore, cfg: ModelConfig, table_log: Optional[list] = None
) -> Bitstream:
    """Encode an 8-bit RGB image.

    When table_log is a list, the tables of every latent site are appended
    to it in coding order.
    """
    image = _check_image(image)
    height, width, _ = image.shape
    latents = analyse(image, w, cfg)

    z_hat = latents.z_hat
    z_payload = encode_stream(z_hat.data.ravel(), hyper_tables(w, cfg, z_hat.dims))

    sites = SiteModel(latents.hyper, w, cfg)
    symbols = latents.y_hat.data[0]
    _, rows, cols = symbols.shape
    encoder = RangeEncoder()
    for row in range(rows):
        for col in range(cols):
            tables = sites.tables(symbols, row, col)
            if table_log is not None:
                table_log.append(tables)
            for channel, table in enumerate(tables):
                encoder.encode(int(symbols[channel, row, col]), table)
    y_payload = encoder.finish()

    bitstream = Bitstream(
        width, height, 3, cfg.fingerprint, cfg.y_alphabet, cfg.z_alphabet, z_payload, y_payload
    )
    _LOGGER.info(
        "Compressed %dx%d image to %d bytes (%.4f bpp)",
        width,
        height,
        bitstream.num_bytes,
        bitstream.bpp,
    )
    return bitstream


def decode_latents(
    bitstream: Bitstream, w: WeightStore, cfg: ModelConfig, table_log: Optional[list] = None
):
    """Decode the hyper-latents, then the latents site by site in raster order.

    Returns the (1, C_z, h, w) hyper-latents and (1, C_y, h, w) latents.
    """
    check_weights(w, cfg)
    if bitstream.fingerprint != cfg.fingerprint:
        raise WeightFileError(
            f"Bitstream fingerprint {bitstream.fingerprint:016x} does not match "
            f"weights {cfg.fingerprint:016x}"
        )
    if tuple(bitstream.y_alphabet) != cfg.y_alphabet or tuple(bitstream.z_alphabet) != cfg.z_alphabet:
        raise BitstreamError("Bitstream alphabets do not match the model config")

    p_height, p_width = padded_dims(bitstream.height, bitstream.width)
    y_rows, y_cols = p_height // DOWNSAMPLE_FACTOR, p_width // DOWNSAMPLE_FACTOR
    z_dims = (
        1,
        cfg.hyper_channels,
        y_rows // HYPER_DOWNSAMPLE_FACTOR,
        y_cols // HYPER_DOWNSAMPLE_FACTOR,
    )

    z_symbols = decode_stream(bitstream.z_payload, hyper_tables(w, cfg, z_dims)).reshape(z_dims)
    hyper = hyper_synthesis(RealTensor(z_symbols.astype(np.float32)), w)

    sites = SiteModel(hyper, w, cfg)
    symbols = np.zeros((cfg.latent_channels, y_rows, y_cols), dtype=np.int32)
    decoder = RangeDecoder(bitstream.y_payload)
    for row in range(y_rows):
        for col in range(y_cols):
            tables = sites.tables(symbols, row, col)
            if table_log is not None:
                table_log.append(tables)
            for channel, table in enumerate(tables):
                symbols[channel, row, col] = decoder.decode(table)
    decoder.finish()
    return z_symbols.astype(np.int32), symbols[None]


def decompress(
    bitstream: Bitstream, w: WeightStore, cfg: ModelConfig, table_log: Optional[list] = None
) -> np.ndarray:
    _, y_symbols = decode_latents(bitstream, w, cfg, table_log)
    x_hat = synthesis_transform(RealTensor(y_symbols.astype(np.float32)), w)
    _LOGGER.debug("Decoded %dx%d image", bitstream.width, bitstream.height)
    return to_image(x_hat, bitstream.height, bitstream.width)


def decode_bytes(data: bytes, w: WeightStore, cfg: ModelConfig) -> np.ndarray:
    """Parse and decode a serialised bitstream; every failure is a DecodeError."""
    try:
        return decompress(Bitstream.from_bytes(data), w, cfg)
    except (DecodeError, WeightFileError):
        raise
    except (ValueError, IndexError, OverflowError) as err:
        raise DecodeError(f"Cannot decode bitstream: {err}") from err
