"""Integer CDF tables and a byte-oriented range coder.

The coder keeps a 32-bit range and a 33-bit low value. Carries out of the
low value propagate into a one byte cache plus a run of pending 0xFF bytes,
so every symbol costs its exact share of the range. Totals are fixed at
2^16.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Sequence

import numpy as np

from .const import PRECISION_BITS, TOTAL_FREQUENCY
from .entropy import Pmf
from .errors import ConfigError, DecodeError, EncodeError, ParameterError

_LOGGER = logging.getLogger(__name__)

MASK32 = 0xFFFFFFFF
RANGE_TOP = 1 << 24
MAX_VIRTUAL_BYTES = 4


@dataclass(frozen=True, eq=False)
class CdfTable:
    """Cumulative integer frequencies; cum[0] = 0, cum[-1] = 2^16."""

    a_min: int
    a_max: int
    cum: np.ndarray

    def __post_init__(self):
        cum = np.asarray(self.cum, dtype=np.int64)
        if cum.shape != (self.a_max - self.a_min + 2,):
            raise ParameterError(f"Table of {cum.shape} does not fit [{self.a_min}, {self.a_max}]")
        if cum[0] != 0 or cum[-1] != TOTAL_FREQUENCY:
            raise ParameterError("Table must run from 0 to the total frequency")
        if np.any(np.diff(cum) < 1):
            raise ParameterError("Every symbol needs a frequency of at least 1")
        cum.setflags(write=False)
        object.__setattr__(self, "cum", cum)

    @property
    def frequencies(self):
        return np.diff(self.cum)

    def __eq__(self, other):
        if not isinstance(other, CdfTable):
            return NotImplemented
        return (
            self.a_min == other.a_min
            and self.a_max == other.a_max
            and np.array_equal(self.cum, other.cum)
        )

    __hash__ = None


def quantize_frequencies(probs) -> np.ndarray:
    """Integer frequencies summing to 2^16, every bin at least 1.

    floor(p * 2^16) is topped up by largest remainder, then empty bins are
    lifted to 1 by taking from the largest bin.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    rows, size = probs.shape
    if size > TOTAL_FREQUENCY:
        raise ConfigError(f"Alphabet of {size} does not fit a total of {TOTAL_FREQUENCY}")
    probs = np.clip(probs, 0.0, None)
    sums = probs.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ParameterError("Pmf has no mass")
    scaled = probs / sums * TOTAL_FREQUENCY

    freq = np.floor(scaled).astype(np.int64)
    short = TOTAL_FREQUENCY - freq.sum(axis=1)
    order = np.argsort(-(scaled - freq), axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(size), (rows, size)), axis=1)
    freq += rank < short[:, None]

    for row in np.flatnonzero((freq == 0).any(axis=1)):
        values = freq[row]
        empty = values == 0
        deficit = int(empty.sum())
        values[empty] = 1
        while deficit:
            largest = int(np.argmax(values))
            take = min(deficit, int(values[largest]) - 1)
            values[largest] -= take
            deficit -= take
    return freq


def _table(a_min, a_max, freq):
    return CdfTable(a_min, a_max, np.concatenate([[0], np.cumsum(freq)]))


def build_table(pmf: Pmf) -> CdfTable:
    if pmf.probs.ndim != 1:
        raise ParameterError(f"build_table takes a single pmf, got batch {pmf.batch_shape}")
    return _table(pmf.a_min, pmf.a_max, quantize_frequencies(pmf.probs)[0])


def build_tables(pmf: Pmf) -> list:
    """One table per site of a batched pmf, in C order."""
    freq = quantize_frequencies(pmf.probs.reshape(-1, pmf.size))
    return [_table(pmf.a_min, pmf.a_max, row) for row in freq]


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self._cache = 0
        self._cache_size = 1
        self._leading = True
        self._out = bytearray()
        self.symbols = 0

    def _emit(self, byte):
        # The first byte stands for the integer part of the code value, always 0.
        if self._leading:
            self._leading = False
            return
        self._out.append(byte)

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            byte = self._cache
            while True:
                self._emit((byte + carry) & 0xFF)
                byte = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (self.low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (self.low << 8) & MASK32

    def encode(self, symbol: int, table: CdfTable) -> None:
        if not table.a_min <= symbol <= table.a_max:
            raise EncodeError(f"Symbol {symbol} outside table [{table.a_min}, {table.a_max}]")
        index = symbol - table.a_min
        start = int(table.cum[index])
        stop = int(table.cum[index + 1])
        r = self.range >> PRECISION_BITS
        self.low += r * start
        if stop == TOTAL_FREQUENCY:
            self.range -= r * start
        else:
            self.range = r * (stop - start)
        while self.range < RANGE_TOP:
            self.range <<= 8
            self._shift_low()
        self.symbols += 1

    def finish(self) -> bytes:
        """Flush the shortest tail that still identifies the final interval."""
        if not self.symbols:
            return b""
        for trailing in range(MAX_VIRTUAL_BYTES + 1):
            mask = (1 << (32 - 8 * trailing)) - 1
            value = (self.low + mask) & ~mask
            if value < self.low + self.range:
                break
        self.low = value
        for _ in range(trailing + 1):
            self._shift_low()
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0
        self._virtual = 0
        self.range = MASK32
        self.code = 0
        self._started = False

    def _next_byte(self):
        if self._pos < len(self._data):
            byte = self._data[self._pos]
            self._pos += 1
            return byte
        self._virtual += 1
        if self._virtual > MAX_VIRTUAL_BYTES:
            raise DecodeError("Payload ended before all symbols were decoded")
        return 0

    def _start(self):
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()
        self._started = True

    def decode(self, table: CdfTable) -> int:
        if not self._started:
            self._start()
        r = self.range >> PRECISION_BITS
        value = min(self.code // r, TOTAL_FREQUENCY - 1)
        index = int(np.searchsorted(table.cum, value, side="right")) - 1
        start = int(table.cum[index])
        stop = int(table.cum[index + 1])
        self.code -= r * start
        if stop == TOTAL_FREQUENCY:
            self.range -= r * start
        else:
            self.range = r * (stop - start)
        if self.code >= self.range:
            raise DecodeError("Payload is corrupt")
        while self.range < RANGE_TOP:
            self.code = (self.code << 8) | self._next_byte()
            self.range <<= 8
        return table.a_min + index

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise DecodeError(f"Payload has {len(self._data) - self._pos} unread bytes")


def encode_stream(symbols: Sequence[int], tables: Sequence[CdfTable]) -> bytes:
    symbols = np.asarray(symbols).ravel()
    if len(symbols) != len(tables):
        raise EncodeError(f"{len(symbols)} symbols but {len(tables)} tables")
    encoder = RangeEncoder()
    for symbol, table in zip(symbols.tolist(), tables):
        encoder.encode(symbol, table)
    payload = encoder.finish()
    _LOGGER.debug("Encoded %d symbols into %d bytes", len(symbols), len(payload))
    return payload


def decode_stream(data: bytes, tables: Sequence[CdfTable]) -> np.ndarray:
    decoder = RangeDecoder(data)
    symbols = np.fromiter((decoder.decode(table) for table in tables), dtype=np.int64, count=len(tables))
    decoder.finish()
    return symbols
