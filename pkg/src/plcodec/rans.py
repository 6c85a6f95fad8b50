"""Range asymmetric numeral system coder over quantized Gaussian tables.

Symbols are integers modelled by a zero-mean discretized Gaussian whose
standard deviation is quantized to a fixed grid of levels. Each level owns a
frequency table over [-tail, tail] plus one escape bin; escaped values are
carried inside the same stream as a zigzag varint through a uniform byte
model, so the stream stays self-contained.

The coder is last-in-first-out: symbols are pushed in reverse order and the
stream decodes forward. Layout: renormalization bytes in production order,
then the 4-byte little-endian final state. Decoding runs the inverse state
machine and must terminate exactly at the initial state with every byte
consumed; anything else raises, so truncation is never silent.

Tables are built from high-precision arithmetic (mpmath) rather than libm
erf, so the same table bytes come out on every platform.
"""

from __future__ import annotations

import functools
import math
import struct
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import CodingError

RANS_L = 1 << 23  # lower bound of the normalized state interval
_STATE_BYTES = 4

DEFAULT_PRECISION = 16
DEFAULT_TAIL = 255
SCALE_MIN = 0.11
SCALE_MAX = 256.0
SCALE_LEVELS = 64


@dataclass(frozen=True)
class ScaleTable:
    """Grid of standard-deviation levels shared by encoder and decoder."""

    levels: tuple[float, ...]
    precision: int = DEFAULT_PRECISION

    def __post_init__(self) -> None:
        if len(self.levels) < 1:
            raise CodingError("scale table needs at least one level")
        if self.levels[0] <= 0:
            raise CodingError("scale levels must be positive")
        for a, b in zip(self.levels, self.levels[1:]):
            if not a < b:
                raise CodingError("scale levels must be strictly increasing")
        if not 2 <= self.precision <= 24:
            raise CodingError(f"precision {self.precision} out of range [2, 24]")


def default_scale_table() -> ScaleTable:
    """Log-spaced levels from 0.11 to 256, 64 steps."""
    lo, hi = math.log(SCALE_MIN), math.log(SCALE_MAX)
    levels = tuple(math.exp(lo + (hi - lo) * i / (SCALE_LEVELS - 1)) for i in range(SCALE_LEVELS))
    return ScaleTable(levels)


def quantize_scale(sigma: float, table: ScaleTable) -> int:
    """Index of the smallest level >= sigma, clamped to the largest level."""
    sigma = float(sigma)
    if math.isnan(sigma):
        raise CodingError("sigma is NaN")
    idx = bisect_left(table.levels, sigma)
    return min(idx, len(table.levels) - 1)


def quantize_scales(sigmas: np.ndarray, table: ScaleTable) -> np.ndarray:
    """Vectorized quantize_scale over a float array."""
    arr = np.asarray(sigmas, dtype=np.float64)
    if np.isnan(arr).any():
        raise CodingError("sigma contains NaN")
    idx = np.searchsorted(np.asarray(table.levels), arr, side="left")
    return np.minimum(idx, len(table.levels) - 1).astype(np.int64)


@dataclass
class CdfTable:
    """Quantized cumulative frequency tables, one row per scale level.

    ``cdf[l]`` has ``2 * tail + 3`` entries: cumulative frequencies over the
    bins for symbols -tail..tail followed by the escape bin, starting at 0
    and ending at ``1 << precision``. Every bin has frequency >= 1 so any
    integer is codable at any level.
    """

    scale_table: ScaleTable
    tail: int
    cdf: np.ndarray

    def __post_init__(self) -> None:
        self._rows = [row.tolist() for row in self.cdf]

    @property
    def precision(self) -> int:
        return self.scale_table.precision

    @property
    def num_bins(self) -> int:
        return 2 * self.tail + 2

    @property
    def escape_bin(self) -> int:
        return 2 * self.tail + 1


def _gaussian_bin_probs(sigma: float, tail: int) -> list[float]:
    """Exact bin masses of the discretized unit-mean-zero Gaussian.

    Bin b covers (b - 0.5, b + 0.5); the escape bin takes everything beyond
    +-(tail + 0.5). Computed in 30-digit arithmetic so float64 rounding of
    the result is identical everywhere.
    """
    with mpmath.workdps(30):
        s = mpmath.mpf(repr(float(sigma)))
        inv = 1 / (s * mpmath.sqrt(2))
        # Half-open CDF values at the positive bin edges b + 0.5.
        upper = [0.5 * mpmath.erf((b + mpmath.mpf("0.5")) * inv) for b in range(tail + 1)]
        probs_pos = [upper[0] * 2]  # bin 0 is symmetric around zero
        for b in range(1, tail + 1):
            probs_pos.append(upper[b] - upper[b - 1])
        escape = 2 * (mpmath.mpf("0.5") - upper[tail])
        neg = [float(p) for p in probs_pos[1:][::-1]]
        out = neg + [float(probs_pos[0])] + [float(p) for p in probs_pos[1:]]
        out.append(float(escape))
    return out


def _quantize_pmf(probs: list[float], precision: int) -> np.ndarray:
    """Round a pmf to integer frequencies summing to 1 << precision.

    Every bin keeps frequency >= 1. The remainder after flooring is handed
    out by descending fractional part (ties by lower index) so the result is
    deterministic.
    """
    total = 1 << precision
    n = len(probs)
    scaled = np.asarray(probs, dtype=np.float64) * (total - n)
    base = np.floor(scaled).astype(np.int64) + 1
    remainder = total - int(base.sum())
    if remainder < 0:
        # Possible only through float round-up at the sum boundary; shave the
        # largest bins first.
        order = np.argsort(-base, kind="stable")
        i = 0
        while remainder < 0:
            j = order[i % n]
            if base[j] > 1:
                base[j] -= 1
                remainder += 1
            i += 1
    elif remainder > 0:
        frac = scaled - np.floor(scaled)
        order = np.argsort(-frac, kind="stable")
        for i in range(remainder):
            base[order[i % n]] += 1
    if base.sum() != total or (base < 1).any():
        raise CodingError("pmf quantization failed")
    return base


def build_tables(scale_table: ScaleTable, tail: int = DEFAULT_TAIL) -> CdfTable:
    """Build the per-level cumulative frequency tables for a scale grid."""
    if tail < 1:
        raise CodingError(f"tail must be >= 1, got {tail}")
    if scale_table.precision < 8:
        raise CodingError("precision must be >= 8 for the escape byte model")
    nbins = 2 * tail + 2
    if (1 << scale_table.precision) < 4 * nbins:
        raise CodingError(
            f"precision {scale_table.precision} too small for {nbins} bins"
        )
    rows = np.zeros((len(scale_table.levels), nbins + 1), dtype=np.uint32)
    for li, sigma in enumerate(scale_table.levels):
        freqs = _quantize_pmf(_gaussian_bin_probs(sigma, tail), scale_table.precision)
        rows[li, 1:] = np.cumsum(freqs, dtype=np.uint64)
    return CdfTable(scale_table=scale_table, tail=tail, cdf=rows)


@functools.lru_cache(maxsize=1)
def default_tables() -> CdfTable:
    return build_tables(default_scale_table())


def _zigzag(v: int) -> int:
    return (v << 1) if v >= 0 else ((-v << 1) - 1)


def _unzigzag(u: int) -> int:
    return (u >> 1) if (u & 1) == 0 else -((u + 1) >> 1)


def _varint_bytes(u: int) -> list[int]:
    out = []
    while True:
        g = u & 0x7F
        u >>= 7
        if u:
            out.append(g | 0x80)
        else:
            out.append(g)
            return out


def _prepare(symbols, level_indices, tables: CdfTable):
    sy = np.asarray(symbols, dtype=np.int64).ravel()
    lv = np.asarray(level_indices, dtype=np.int64).ravel()
    if sy.shape != lv.shape:
        raise CodingError(
            f"{sy.size} symbols but {lv.size} level indices"
        )
    if lv.size and (lv.min() < 0 or lv.max() >= len(tables.scale_table.levels)):
        raise CodingError("level index out of table range")
    return sy, lv


def encode_symbols(symbols, level_indices, tables: CdfTable) -> bytes:
    """Encode integer symbols under per-symbol scale levels.

    Returns the self-terminating stream; an empty symbol sequence encodes to
    just the 4 final-state bytes.
    """
    sy, lv = _prepare(symbols, level_indices, tables)
    tail = tables.tail
    esc_bin = tables.escape_bin
    precision = tables.precision
    esc = np.abs(sy) > tail
    bins = np.where(esc, esc_bin, sy + tail)
    starts = tables.cdf[lv, bins].astype(np.int64)
    freqs = tables.cdf[lv, bins + 1].astype(np.int64) - starts

    sy_l = sy.tolist()
    starts_l = starts.tolist()
    freqs_l = freqs.tolist()
    esc_l = esc.tolist()

    byte_freq = 1 << (precision - 8)
    x_max_base = RANS_L >> precision << 8  # renorm threshold is this times freq
    x = RANS_L
    out = bytearray()
    for i in range(len(sy_l) - 1, -1, -1):
        if esc_l[i]:
            for b in reversed(_varint_bytes(_zigzag(sy_l[i]))):
                # Uniform byte model: start = b * byte_freq, freq = byte_freq.
                while x >= x_max_base * byte_freq:
                    out.append(x & 0xFF)
                    x >>= 8
                x = ((x // byte_freq) << precision) + (x % byte_freq) + b * byte_freq
        f = freqs_l[i]
        while x >= x_max_base * f:
            out.append(x & 0xFF)
            x >>= 8
        x = ((x // f) << precision) + (x % f) + starts_l[i]
    out += struct.pack("<I", x)
    return bytes(out)


class RansDecoder:
    """Incremental decoder over one stream.

    Symbols come out in encode order; ``decode`` may be called repeatedly
    with chunks of level indices (the caller may need earlier symbols to
    derive later levels). ``finish`` must be called once at the end and
    raises unless the stream was consumed exactly.
    """

    def __init__(self, stream: bytes, tables: CdfTable) -> None:
        if len(stream) < _STATE_BYTES:
            raise CodingError(f"stream too short: {len(stream)} bytes")
        self._stream = stream
        self._tables = tables
        self._x = struct.unpack("<I", stream[-_STATE_BYTES:])[0]
        self._pos = len(stream) - _STATE_BYTES

    def decode(self, level_indices) -> np.ndarray:
        lv = np.asarray(level_indices, dtype=np.int64).ravel()
        tables = self._tables
        if lv.size and (lv.min() < 0 or lv.max() >= len(tables.scale_table.levels)):
            raise CodingError("level index out of table range")
        stream = self._stream
        x = self._x
        pos = self._pos
        precision = tables.precision
        mask = (1 << precision) - 1
        tail = tables.tail
        esc_bin = tables.escape_bin
        byte_shift = precision - 8
        rows = tables._rows
        out = [0] * lv.size

        for i, level in enumerate(lv.tolist()):
            row = rows[level]
            cf = x & mask
            b = bisect_right(row, cf) - 1
            x = (row[b + 1] - row[b]) * (x >> precision) + cf - row[b]
            while x < RANS_L:
                if pos == 0:
                    raise CodingError("stream truncated during renormalization")
                pos -= 1
                x = (x << 8) | stream[pos]
            if b == esc_bin:
                u = 0
                shift = 0
                while True:
                    cf = x & mask
                    byte = cf >> byte_shift
                    x = (x >> precision << byte_shift) + (cf & ((1 << byte_shift) - 1))
                    while x < RANS_L:
                        if pos == 0:
                            raise CodingError("stream truncated inside escape value")
                        pos -= 1
                        x = (x << 8) | stream[pos]
                    u |= (byte & 0x7F) << shift
                    shift += 7
                    if not byte & 0x80:
                        break
                out[i] = _unzigzag(u)
            else:
                out[i] = b - tail
        self._x = x
        self._pos = pos
        return np.asarray(out, dtype=np.int64)

    def finish(self) -> None:
        if self._x != RANS_L or self._pos != 0:
            raise CodingError("stream corrupt: final state mismatch")


def decode_symbols(stream: bytes, level_indices, tables: CdfTable) -> np.ndarray:
    """Decode exactly len(level_indices) symbols from a stream.

    Raises CodingError unless the stream is consumed completely and the
    state machine lands back on its initial value.
    """
    dec = RansDecoder(stream, tables)
    out = dec.decode(level_indices)
    dec.finish()
    return out


def code_length_bits(symbols, level_indices, tables: CdfTable) -> float:
    """Ideal code length in bits of symbols under the quantized tables.

    Escaped values cost the escape bin plus exactly 8 bits per varint byte.
    This is the model cost only; the realized stream adds a small constant
    for the final state.
    """
    sy, lv = _prepare(symbols, level_indices, tables)
    if sy.size == 0:
        return 0.0
    tail = tables.tail
    esc = np.abs(sy) > tail
    bins = np.where(esc, tables.escape_bin, sy + tail)
    freqs = (tables.cdf[lv, bins + 1] - tables.cdf[lv, bins]).astype(np.float64)
    bits = tables.precision - np.log2(freqs)
    total = float(bits.sum())
    for v in sy[esc].tolist():
        total += 8.0 * len(_varint_bytes(_zigzag(v)))
    return total
