"""Shared fixtures for the gllmm_codec tests."""

from dataclasses import dataclass
import json
import os

import numpy as np
import pytest

from gllmm_codec.codec import Bitstream, analyse, compress, decode_latents, decompress
from gllmm_codec.network import ModelConfig, zero_weights
from gllmm_codec.weight_store import init_random

from .golden import (
    GOLDEN_DIGESTS,
    IMAGE_SEED,
    RECORD_ENV,
    WEIGHT_SEED,
    fresh_process_digests,
    make_image,
)


@dataclass
class RoundTrip:
    image: np.ndarray
    bitstream: Bitstream
    serialized: bytes
    encode_tables: list
    decode_tables: list
    z_symbols: np.ndarray
    y_symbols: np.ndarray
    recon: np.ndarray


@pytest.fixture(scope="session")
def model_config():
    return ModelConfig()


@pytest.fixture(scope="session")
def weights(model_config):
    return init_random(model_config, WEIGHT_SEED)


@pytest.fixture(scope="session")
def zero_store(model_config):
    return zero_weights(model_config)


@pytest.fixture(scope="session")
def image():
    return make_image(IMAGE_SEED)


@pytest.fixture(scope="session")
def latents(image, weights, model_config):
    return analyse(image, weights, model_config)


@pytest.fixture(scope="session")
def round_trip(image, weights, model_config):
    encode_tables = []
    decode_tables = []
    bitstream = compress(image, weights, model_config, table_log=encode_tables)
    z_symbols, y_symbols = decode_latents(bitstream, weights, model_config, decode_tables)
    return RoundTrip(
        image=image,
        bitstream=bitstream,
        serialized=bitstream.to_bytes(),
        encode_tables=encode_tables,
        decode_tables=decode_tables,
        z_symbols=z_symbols,
        y_symbols=y_symbols,
        recon=decompress(bitstream, weights, model_config),
    )


@pytest.fixture(scope="session")
def golden():
    """Assert digests against the committed file.

    A name missing from the file is checked against a fresh interpreter
    instead, and written to the file when GLLMM_RECORD_GOLDEN is set.
    """
    digests = json.loads(GOLDEN_DIGESTS.read_text(encoding="utf-8"))

    def check(name, digest):
        if name in digests:
            assert digest == digests[name]
            return
        assert digest == fresh_process_digests(name)
        if os.environ.get(RECORD_ENV):
            digests[name] = digest
            GOLDEN_DIGESTS.write_text(json.dumps(digests, indent=2, sort_keys=True) + "\n")

    return check
