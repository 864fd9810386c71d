"""Range-based arithmetic coding over integer cumulative tables.

Symbols are coded against cumulative-frequency tables with a fixed total of
2**24 and a minimum per-symbol width of 2, built from real probability
vectors by deterministic integer rounding.  The coder keeps a 64-bit low
register and a 32-bit range register with byte-wise renormalization and
carry propagation; interval boundaries are computed with the high-precision
product ``(range * bound) >> 24`` so the waste per coded symbol is a
vanishing fraction of a bit.  Encoder and decoder fed bit-identical tables
in the same order are exact inverses.
"""

from __future__ import annotations

import numpy as np

#: Log2 of the shared cumulative total of every table.
TOTAL_BITS = 24
#: Every table's widths sum to exactly this.
TOTAL = 1 << TOTAL_BITS
#: Smallest admissible per-symbol width.
MIN_WIDTH = 2
#: Renormalization threshold for the 32-bit range register.
RANGE_TOP = 1 << 24
_RANGE_MASK = 0xFFFFFFFF


class CdfTable:
    """Integer cumulative bounds ``0 = c_0 < c_1 <= ... <= c_N = 2**24``.

    ``bounds`` has one more entry than the alphabet; symbol ``k`` owns the
    half-open slice ``[c_k, c_{k+1})`` whose width must be at least 2.
    """

    __slots__ = ("bounds",)

    def __init__(self, bounds):
        bounds = np.ascontiguousarray(bounds, dtype=np.int64)
        if bounds.ndim != 1 or bounds.shape[0] < 2:
            raise ValueError("bounds must be a 1-D array with >= 2 entries")
        if bounds[0] != 0 or bounds[-1] != TOTAL:
            raise ValueError(f"bounds must run from 0 to {TOTAL}")
        widths = np.diff(bounds)
        if np.any(widths < MIN_WIDTH):
            raise ValueError(f"every symbol width must be >= {MIN_WIDTH}")
        self.bounds = bounds

    @classmethod
    def from_widths(cls, widths) -> "CdfTable":
        widths = np.asarray(widths, dtype=np.int64)
        bounds = np.zeros(widths.shape[0] + 1, dtype=np.int64)
        np.cumsum(widths, out=bounds[1:])
        return cls(bounds)

    @property
    def n_symbols(self) -> int:
        return self.bounds.shape[0] - 1

    def widths(self) -> np.ndarray:
        return np.diff(self.bounds)

    def __eq__(self, other):
        return isinstance(other, CdfTable) and np.array_equal(
            self.bounds, other.bounds
        )

    def __repr__(self):
        return f"CdfTable(n_symbols={self.n_symbols})"


def quantize_pdf(probs) -> CdfTable:
    """Deterministically map a probability vector to a CdfTable.

    Probabilities are rounded half-up to multiples of 1e-6, scaled to
    integer widths summing to 2**24 by largest-remainder allocation (ties
    to the lowest index), then repaired to the minimum width of 2 by
    shaving the widest symbols down to a common level.  The result is a
    pure function of the rounded probabilities — identical across runs and
    platforms.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    n = probs.shape[0]
    if n < 1:
        raise ValueError("need at least one symbol")
    if n > TOTAL // MIN_WIDTH:
        raise ValueError(
            f"alphabet of {n} cannot receive minimum width {MIN_WIDTH} "
            f"within a total of {TOTAL}"
        )
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ValueError("probabilities must be finite and non-negative")

    units = np.floor(probs * 1e6 + 0.5).astype(np.int64)
    unit_sum = int(units.sum())
    if unit_sum == 0:
        units = np.ones(n, dtype=np.int64)
        unit_sum = n

    scaled = units * TOTAL
    widths = scaled // unit_sum
    remainder = scaled - widths * unit_sum
    missing = TOTAL - int(widths.sum())
    if missing:
        # Largest remainder first; ties broken toward the lowest index.
        order = np.lexsort((np.arange(n), -remainder))
        widths[order[:missing]] += 1

    deficit = MIN_WIDTH - widths
    need = int(deficit[deficit > 0].sum())
    if need:
        donors = widths > MIN_WIDTH
        widths = np.where(deficit > 0, MIN_WIDTH, widths)
        # Lower the widest donors toward a common level until the shave
        # covers the deficit, never pushing a donor below the minimum.
        order = np.lexsort((np.arange(n), -np.where(donors, widths, -1)))
        donor_idx = order[: int(donors.sum())]
        w = widths[donor_idx]  # descending
        prefix = np.cumsum(w)
        counts = np.arange(1, w.shape[0] + 1)
        # After lowering the first m donors to level L:
        #   shaved(m, L) = prefix[m-1] - m * L,  valid while L >= w[m] (next donor).
        lower = np.concatenate([w[1:], [MIN_WIDTH]])
        max_shave = prefix - counts * np.maximum(lower, MIN_WIDTH)
        m = int(np.searchsorted(max_shave, need))
        # Level for the first m+1 donors, then give back the rounding slack
        # one unit at a time starting from the widest.
        group = m + 1
        level = (int(prefix[m]) - need) // group
        slack = (int(prefix[m]) - need) - level * group
        w[:group] = level
        w[:slack] += 1
        widths[donor_idx] = w
    return CdfTable.from_widths(widths)


class RangeEncoder:
    """Streaming arithmetic encoder; call ``encode`` per symbol, then
    ``finish`` exactly once to flush and obtain the payload bytes."""

    def __init__(self):
        self.low = 0
        self.range = _RANGE_MASK
        self._cache = None
        self._pending = 0
        self._out = bytearray()
        self._finished = False

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _RANGE_MASK:
            carry = self.low >> 32
            if self._cache is not None:
                self._out.append((self._cache + carry) & 0xFF)
            elif carry:
                # The coded value lies in [0, 2^32), so a carry can never
                # propagate past the first emitted byte.
                raise AssertionError("carry before any output byte")
            if self._pending:
                fill = (0xFF + carry) & 0xFF
                self._out.extend([fill] * self._pending)
                self._pending = 0
            self._cache = (self.low >> 24) & 0xFF
        else:
            self._pending += 1
        self.low = (self.low << 8) & _RANGE_MASK

    def encode(self, symbol: int, table: CdfTable):
        if self._finished:
            raise RuntimeError("encoder already finished")
        bounds = table.bounds
        if not 0 <= symbol < table.n_symbols:
            raise ValueError(f"symbol {symbol} outside alphabet")
        lo = (self.range * int(bounds[symbol])) >> TOTAL_BITS
        hi = (self.range * int(bounds[symbol + 1])) >> TOTAL_BITS
        self.low += lo
        self.range = hi - lo
        while self.range < RANGE_TOP:
            self._shift_low()
            self.range = (self.range << 8) & _RANGE_MASK

    def finish(self) -> bytes:
        if not self._finished:
            for _ in range(5):
                self._shift_low()
            self._finished = True
        return bytes(self._out)


class RangeDecoder:
    """Streaming arithmetic decoder over a payload produced by
    ``RangeEncoder`` fed bit-identical tables in the same order.  Reading
    past the end of the payload yields zero bytes, so truncated input
    decodes to wrong symbols rather than crashing."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self.range = _RANGE_MASK
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos < len(self._data):
            b = self._data[self._pos]
            self._pos += 1
            return b
        return 0

    def decode(self, table: CdfTable) -> int:
        scaled = (self.range * table.bounds) >> TOTAL_BITS
        symbol = int(np.searchsorted(scaled, self.code, side="right")) - 1
        symbol = min(max(symbol, 0), table.n_symbols - 1)
        self.code -= int(scaled[symbol])
        self.range = int(scaled[symbol + 1] - scaled[symbol])
        while self.range < RANGE_TOP:
            self.code = ((self.code << 8) | self._next_byte())
            self.range = (self.range << 8) & _RANGE_MASK
        return symbol


def _as_table_list(tables, count=None):
    if isinstance(tables, CdfTable):
        if count is None:
            raise ValueError("a symbol count is needed with a single table")
        return [tables] * count
    return list(tables)


def range_encode(symbols, tables) -> bytes:
    """Encode a symbol sequence; ``tables`` is one CdfTable (shared) or one
    per symbol."""
    symbols = [int(s) for s in symbols]
    table_list = _as_table_list(tables, len(symbols))
    if len(table_list) != len(symbols):
        raise ValueError("need exactly one table per symbol")
    enc = RangeEncoder()
    for symbol, table in zip(symbols, table_list):
        enc.encode(symbol, table)
    return enc.finish()


def range_decode(data: bytes, tables, n_symbols: int = None) -> list:
    """Decode ``n_symbols`` symbols (inferred from a table list if given)."""
    table_list = _as_table_list(tables, n_symbols)
    dec = RangeDecoder(data)
    return [dec.decode(table) for table in table_list]
