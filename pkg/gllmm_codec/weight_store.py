"""Named weight tensors, random initialisation and the GLWS file format."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from pathlib import Path
import struct
from typing import Mapping
import zlib

import numpy as np

from .const import DTYPE_REAL32, WEIGHT_MAGIC, WEIGHT_VERSION
from .errors import WeightFileError
from .weight_layout import FACTORIZED_NAME, HEAD_NAMES, weight_layout

_LOGGER = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sHQI")
_CRC = struct.Struct("<I")

# Initial entropy-parameter head output: wide unimodal components.
INITIAL_SCALE = 2.0
HEAD_OUT_GAIN = 0.1
INITIAL_FACTORIZED_SPREAD = 4.0


@dataclass(frozen=True, eq=False)
class WeightStore:
    """Immutable map from tensor name to a float32 array."""

    tensors: Mapping[str, np.ndarray]
    fingerprint: int
    config: object = field(default=None, repr=False)

    def __post_init__(self):
        tensors = {
            name: np.asarray(value, dtype=np.float32) for name, value in self.tensors.items()
        }
        for value in tensors.values():
            value.setflags(write=False)
        object.__setattr__(self, "tensors", tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError as err:
            raise WeightFileError(f"Weight store has no tensor named {name}") from err

    def __contains__(self, name):
        return name in self.tensors

    def __len__(self):
        return len(self.tensors)

    def __eq__(self, other):
        if not isinstance(other, WeightStore):
            return NotImplemented
        if self.fingerprint != other.fingerprint:
            return False
        if list(self.tensors) != list(other.tensors):
            return False
        return all(
            self.tensors[name].shape == other.tensors[name].shape
            and self.tensors[name].tobytes() == other.tensors[name].tobytes()
            for name in self.tensors
        )

    __hash__ = None

    @property
    def names(self):
        return list(self.tensors)

    def scope(self, prefix: str) -> WeightStore:
        """Return the tensors under prefix with the prefix stripped."""
        head = f"{prefix}."
        return WeightStore(
            {
                name[len(head) :]: value
                for name, value in self.tensors.items()
                if name.startswith(head)
            },
            self.fingerprint,
            self.config,
        )

    def replace(self, name: str, value) -> WeightStore:
        """Return a copy with one tensor swapped for a same-shaped value."""
        current = self[name]
        value = np.asarray(value, dtype=np.float32)
        if value.shape != current.shape:
            raise WeightFileError(
                f"Tensor {name} has dims {current.shape}, replacement has {value.shape}"
            )
        tensors = dict(self.tensors)
        tensors[name] = value
        return WeightStore(tensors, self.fingerprint, self.config)


def validate_store(w: WeightStore, cfg) -> None:
    """Check a store against the layout and fingerprint of cfg."""
    if w.fingerprint != cfg.fingerprint:
        raise WeightFileError(
            f"Weight fingerprint {w.fingerprint:016x} does not match config {cfg.fingerprint:016x}"
        )
    layout = weight_layout(cfg)
    missing = [name for name in layout if name not in w.tensors]
    extra = [name for name in w.tensors if name not in layout]
    if missing:
        raise WeightFileError(f"Weight store is missing {len(missing)} tensors, first {missing[0]}")
    if extra:
        raise WeightFileError(f"Weight store has {len(extra)} unknown tensors, first {extra[0]}")
    for name, dims in layout.items():
        if w.tensors[name].shape != dims:
            raise WeightFileError(
                f"Tensor {name} has dims {w.tensors[name].shape}, expected {dims}"
            )


def _inverse_softplus(value):
    return float(np.log(np.expm1(value)))


def _initial_tensor(name, dims, rng, cfg):
    """Draw one tensor of a fresh model."""
    if name == FACTORIZED_NAME:
        z_min, _ = cfg.z_alphabet
        symbols = np.arange(dims[1]) + z_min
        return np.tile(-np.abs(symbols) / INITIAL_FACTORIZED_SPREAD, (dims[0], 1))
    if name.endswith(".beta"):
        return np.full(dims, _inverse_softplus(1.0))
    if name.endswith(".gamma"):
        gamma = np.full(dims, -10.0)
        np.fill_diagonal(gamma, _inverse_softplus(0.1))
        return gamma
    if name.endswith(".bias"):
        bias = np.zeros(dims)
        if name == f"{HEAD_NAMES[-1]}.bias":
            # raw scale slots of every latent channel
            bias = bias.reshape(cfg.latent_channels, -1)
            offset = 3
            for count in cfg.mixture_counts:
                bias[:, offset + 2 * count : offset + 3 * count] = _inverse_softplus(
                    INITIAL_SCALE
                )
                offset += 3 * count
            bias = bias.reshape(dims)
        return bias

    fan_in = int(np.prod(dims[1:]))
    std = 1.0 / np.sqrt(fan_in)
    if name == f"{HEAD_NAMES[-1]}.weight":
        std *= HEAD_OUT_GAIN
    return rng.normal(0.0, std, size=dims)


def init_random(cfg, seed: int) -> WeightStore:
    """Build a reproducible random model for cfg."""
    rng = np.random.default_rng(seed)
    tensors = {
        name: _initial_tensor(name, dims, rng, cfg).astype(np.float32)
        for name, dims in weight_layout(cfg).items()
    }
    _LOGGER.debug("Initialised %d tensors with seed %s", len(tensors), seed)
    return WeightStore(tensors, cfg.fingerprint, cfg)


def to_bytes(w: WeightStore) -> bytes:
    parts = [_HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, w.fingerprint, len(w.tensors))]
    for name, value in w.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", DTYPE_REAL32, value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def from_bytes(data: bytes, cfg=None) -> WeightStore:
    """Parse a GLWS payload, validating it against cfg when given."""
    if len(data) < _HEADER.size + _CRC.size:
        raise WeightFileError("Weight file is truncated")
    body, (crc,) = data[: -_CRC.size], _CRC.unpack(data[-_CRC.size :])
    if zlib.crc32(body) != crc:
        raise WeightFileError("Weight file checksum mismatch")

    magic, version, fingerprint, count = _HEADER.unpack_from(body, 0)
    if magic != WEIGHT_MAGIC:
        raise WeightFileError(f"Not a weight file, magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"Unsupported weight file version {version}")

    tensors = {}
    offset = _HEADER.size
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            dtype, ndim = struct.unpack_from("<BB", body, offset)
            offset += 2
            if dtype != DTYPE_REAL32:
                raise WeightFileError(f"Tensor {name} has unknown dtype code {dtype}")
            dims = struct.unpack_from(f"<{ndim}I", body, offset)
            offset += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if offset + size > len(body):
                raise WeightFileError(f"Tensor {name} runs past the end of the file")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=offset).reshape(
                dims
            )
            offset += size
    except (struct.error, UnicodeDecodeError) as err:
        raise WeightFileError(f"Malformed weight file: {err}") from err
    if offset != len(body):
        raise WeightFileError(f"Weight file has {len(body) - offset} trailing bytes")

    store = WeightStore(tensors, fingerprint, cfg)
    if cfg is not None:
        validate_store(store, cfg)
    return store


def save(w: WeightStore, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(to_bytes(w))
    except OSError as err:
        raise WeightFileError(f"Cannot write weights to {path}: {err}") from err
    _LOGGER.info("Saved %d tensors to %s", len(w), path)


def load(path, cfg=None) -> WeightStore:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as err:
        raise WeightFileError(f"Cannot read weights from {path}: {err}") from err
    store = from_bytes(data, cfg)
    _LOGGER.debug("Loaded %d tensors from %s", len(store), path)
    return store
