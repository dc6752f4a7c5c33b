"""
symbols.py - Integer symbols as binary decisions

A latent integer v in [lo, hi] is written as the n-bit offset v - lo, most
significant bit first. The probability that the next bit is one is the
conditional mass of the upper half of the current sub-interval under the
element's PMF, quantized once to 16 bits. Encoder and decoder reach the
same integers through the same code path (`pmf_table` then
`bit_probability`).

Models are batches of B univariate distributions described by their
cumulative: `lower_tail(x)` = c(x) and `upper_tail(x)` = 1 - c(x), both in
float64, for x of shape (B, k). The PMF of the rounded variable is
c(n + 1/2) - c(n - 1/2).
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Union

import numpy as np
import torch
from scipy.special import ndtr

from density.nonparametric import NonParametricDensity
from utils import config
from utils.errors import ConfigurationError

_HALF_STEP = 0.5


@dataclass(frozen=True)
class SymbolRange:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty symbol range [{self.lo}, {self.hi}]")

    @property
    def count(self) -> int:
        return self.hi - self.lo + 1

    @property
    def n_bits(self) -> int:
        return int(math.ceil(math.log2(self.count))) if self.count > 1 else 0

    def clamp(self, value: int) -> int:
        return min(max(int(value), self.lo), self.hi)

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi


class CumulativeModel(Protocol):
    center: np.ndarray

    def lower_tail(self, x: np.ndarray) -> np.ndarray:
        ...

    def upper_tail(self, x: np.ndarray) -> np.ndarray:
        ...

    def __len__(self) -> int:
        ...


class GaussianModel:
    """Zero-mean Gaussians, one per entry of `scales`."""

    def __init__(self, scales: Union[float, Sequence[float], np.ndarray]):
        self.scales = np.atleast_1d(np.asarray(scales, dtype=np.float64)).reshape(-1)
        if not (self.scales > 0).all():
            raise ConfigurationError("Gaussian scales must be positive")
        self.center = np.zeros_like(self.scales)

    def __len__(self) -> int:
        return self.scales.size

    def lower_tail(self, x: np.ndarray) -> np.ndarray:
        return ndtr(x / self.scales[:, None])

    def upper_tail(self, x: np.ndarray) -> np.ndarray:
        return ndtr(-x / self.scales[:, None])


class ChannelCumulativeModel:
    """The per-channel cumulatives of a NonParametricDensity, evaluated in float64."""

    def __init__(self, density: NonParametricDensity):
        self.density = density
        self.center = np.rint(density.median())

    def __len__(self) -> int:
        return self.density.channels

    def _logits(self, x: np.ndarray) -> torch.Tensor:
        with torch.no_grad():
            return self.density.logits_cumulative(torch.as_tensor(x, dtype=torch.float64))

    def lower_tail(self, x: np.ndarray) -> np.ndarray:
        return torch.sigmoid(self._logits(x)).numpy()

    def upper_tail(self, x: np.ndarray) -> np.ndarray:
        return torch.sigmoid(-self._logits(x)).numpy()


def _smallest_radius(tail, start: np.ndarray, direction: int, threshold: float) -> np.ndarray:
    """Smallest r >= 0 per row with tail(start + direction * (r + 1/2)) < threshold."""
    limit = 1 << config.MAX_RANGE_BITS

    def passes(r):
        points = (start + direction * (r + _HALF_STEP))[:, None]
        return tail(points)[:, 0] < threshold

    upper = np.ones_like(start)
    failing = ~passes(upper)
    while failing.any():
        upper = np.where(failing, upper * 2, upper)
        if (upper > limit).any():
            raise ConfigurationError(
                f"symbol range exceeds 2^{config.MAX_RANGE_BITS} values; the model is too wide to code")
        failing = ~passes(upper)

    lower = np.full_like(start, -1.0)
    while (upper - lower > 1).any():
        mid = np.floor((lower + upper) / 2)
        active = upper - lower > 1
        ok = passes(mid)
        upper = np.where(active & ok, mid, upper)
        lower = np.where(active & ~ok, mid, lower)
    return upper


def derive_ranges(model: CumulativeModel) -> List[SymbolRange]:
    """
    Per distribution, the smallest [lo, hi] around the center leaving less
    than TAIL_MASS outside (each side gets half), widened to a power-of-two
    count of values.
    """
    center = np.asarray(model.center, dtype=np.float64)
    side = config.TAIL_MASS / 2
    up = _smallest_radius(model.upper_tail, center, 1, side)
    down = _smallest_radius(model.lower_tail, center, -1, side)

    ranges = []
    for c, r_down, r_up in zip(center.astype(np.int64), down.astype(np.int64), up.astype(np.int64)):
        lo, hi = int(c - r_down), int(c + r_up)
        count = hi - lo + 1
        widened = 1 << int(math.ceil(math.log2(count))) if count > 1 else 1
        extra = widened - count
        ranges.append(SymbolRange(lo - extra // 2, hi + extra - extra // 2))
    return ranges


def derive_range(model: CumulativeModel) -> SymbolRange:
    if len(model) != 1:
        raise ConfigurationError(f"derive_range expects a single distribution, got {len(model)}")
    return derive_ranges(model)[0]


def pmf_table(model: CumulativeModel, ranges: Sequence[SymbolRange]) -> np.ndarray:
    """
    (B, W) float64 table; row b holds pmf(lo_b + j) for j < count_b and 0 past it.

    Each difference is taken in the tail where both terms are small.
    """
    if len(ranges) != len(model):
        raise ConfigurationError(f"{len(ranges)} ranges for {len(model)} distributions")
    width = max(r.count for r in ranges)
    lows = np.array([r.lo for r in ranges], dtype=np.float64)
    values = lows[:, None] + np.arange(width, dtype=np.float64)[None, :]
    a, b = values - _HALF_STEP, values + _HALF_STEP

    lower_a, lower_b = model.lower_tail(a), model.lower_tail(b)
    upper_a, upper_b = model.upper_tail(a), model.upper_tail(b)
    table = np.where(lower_a > 0.5, upper_a - upper_b, lower_b - lower_a)
    table = np.clip(table, 0.0, 1.0)

    counts = np.array([r.count for r in ranges])
    table[np.arange(width)[None, :] >= counts[:, None]] = 0.0
    return table


def bit_probability(pmf: np.ndarray, base: int, half: int) -> int:
    """
    16-bit P(next bit = 1) for the sub-interval [base, base + 2*half) of `pmf`
    (offsets relative to lo). 32768 when the sub-interval carries no mass.
    """
    whole = float(pmf[base:base + 2 * half].sum())
    if whole <= 0.0:
        return 1 << (config.PROBABILITY_BITS - 1)
    upper = float(pmf[base + half:base + 2 * half].sum())
    scale = 1 << config.PROBABILITY_BITS
    return min(max(int(round(scale * upper / whole)), 1), scale - 1)


def symbol_bits(value: int, symbol_range: SymbolRange) -> List[int]:
    """Offset-binary digits of value - lo, most significant first."""
    offset = int(value) - symbol_range.lo
    n = symbol_range.n_bits
    return [(offset >> (n - 1 - j)) & 1 for j in range(n)]


def encode_symbol(encoder, value: int, pmf: np.ndarray, symbol_range: SymbolRange) -> None:
    if value not in symbol_range:
        raise ValueError(f"value {value} outside [{symbol_range.lo}, {symbol_range.hi}]; clamp before coding")
    base = 0
    half = 1 << symbol_range.n_bits
    for bit in symbol_bits(value, symbol_range):
        half >>= 1
        encoder.encode_bit(bit, bit_probability(pmf, base, half))
        if bit:
            base += half


def decode_symbol(decoder, pmf: np.ndarray, symbol_range: SymbolRange) -> int:
    base = 0
    half = 1 << symbol_range.n_bits
    for _ in range(symbol_range.n_bits):
        half >>= 1
        if decoder.decode_bit(bit_probability(pmf, base, half)):
            base += half
    return symbol_range.lo + base


@dataclass
class TabulatedModel:
    """
    Ranges and PMF rows shared by encoder and decoder. `rows` maps each coded
    element to its row; without it there is one row per element.
    """

    ranges: List[SymbolRange]
    table: np.ndarray
    rows: Optional[np.ndarray] = None

    @classmethod
    def from_model(cls, model: CumulativeModel) -> "TabulatedModel":
        ranges = derive_ranges(model)
        return cls(ranges, pmf_table(model, ranges))

    def element_rows(self) -> np.ndarray:
        return np.arange(len(self.ranges)) if self.rows is None else self.rows

    def __len__(self) -> int:
        return len(self.element_rows())

    def take(self, index: np.ndarray) -> "TabulatedModel":
        """Elements that reuse existing rows, e.g. latent elements mapped to their channel."""
        index = np.asarray(index, dtype=np.int64).reshape(-1)
        return TabulatedModel(self.ranges, self.table, self.element_rows()[index])

    def _bounds(self):
        rows = self.element_rows()
        lows = np.array([r.lo for r in self.ranges], dtype=np.int64)[rows]
        highs = np.array([r.hi for r in self.ranges], dtype=np.int64)[rows]
        return rows, lows, highs

    def clamp(self, values: np.ndarray) -> np.ndarray:
        _, lows, highs = self._bounds()
        values = np.rint(np.asarray(values, dtype=np.float64)).astype(np.int64).reshape(-1)
        return np.clip(values, lows, highs)

    def information_bits(self, values: np.ndarray) -> float:
        """Sum of -log2 pmf(values) under the tabulated rows (values must be in range)."""
        values = np.asarray(values, dtype=np.int64).reshape(-1)
        rows, lows, _ = self._bounds()
        probabilities = self.table[rows, values - lows]
        return float(-np.log2(np.maximum(probabilities, config.LIKELIHOOD_FLOOR)).sum())

    def encode(self, encoder, values: np.ndarray) -> None:
        for row, value in zip(self.element_rows(), np.asarray(values, dtype=np.int64).reshape(-1)):
            encode_symbol(encoder, int(value), self.table[row], self.ranges[row])

    def decode(self, decoder) -> np.ndarray:
        return np.array([decode_symbol(decoder, self.table[row], self.ranges[row]) for row in self.element_rows()],
                        dtype=np.int64)
