"""Counting Bloom filter: N byte-counter tables of distinct prime sizes.

Each table indexes a 64-bit canonical k-mer code by ``code % size``;
because the sizes are distinct primes the per-table slots are
quasi-independent, which is what gives the multi-table structure its
Bloom-filter behavior.  Counters are single bytes that saturate at 255
rather than wrapping, so increments commute: the final table contents
depend only on the multiset of codes applied, not on batching or the
interleaving of threads.

Queries return the minimum counter across tables, a one-sided estimate:
never below the true count (truncated at 255), possibly above it when
slots collide.
"""
from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kmer import MAX_K, KmerCodec, canonical_codes

MIN_RECOMMENDED_TABLE_SIZE = 1000

_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


class FilterMemoryError(MemoryError):
    """Table allocation failed; carries the requested byte total."""

    def __init__(self, requested_bytes: int):
        self.requested_bytes = requested_bytes
        super().__init__(f"could not allocate {requested_bytes} bytes of counter tables")


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for anything below 3.3e24."""
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def largest_primes_below(target: int, n: int) -> list[int]:
    """The n largest distinct primes <= target, in descending order."""
    primes: list[int] = []
    candidate = target
    while len(primes) < n:
        if candidate < 2:
            raise ValueError(f"only {len(primes)} primes exist at or below {target}, need {n}")
        if is_prime(candidate):
            primes.append(candidate)
        candidate -= 1
    return primes


@dataclass(frozen=True)
class FilterConfig:
    """Shape of a counting filter: k plus table count/size/batching knobs."""

    k: int
    target_table_size: int
    n_tables: int = 4
    batch_size: int = 512

    def __post_init__(self):
        if not 1 <= self.k <= MAX_K:
            raise ValueError(f"k must be in [1, {MAX_K}], got {self.k}")
        if self.n_tables < 1:
            raise ValueError("n_tables must be >= 1")
        if self.target_table_size < 2:
            raise ValueError("target_table_size must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class CountingFilter:
    """The filter state: counter tables, their locks, and occupancy.

    Table sizes are the n largest distinct primes at or below the
    configured target.  Increments are thread-safe: each table has its
    own lock and updates hold it only for the duration of one scatter,
    so no increment is ever lost below saturation.  Reads take no lock;
    counters only grow, so a concurrent read returns some value between
    the pre- and post-update counts.
    """

    def __init__(self, config: FilterConfig, _sizes: list[int] | None = None):
        self.config = config
        self.codec = KmerCodec(config.k)
        sizes = _sizes if _sizes is not None else largest_primes_below(
            config.target_table_size, config.n_tables
        )
        if min(sizes) < MIN_RECOMMENDED_TABLE_SIZE:
            warnings.warn(
                f"table sizes {sizes} below {MIN_RECOMMENDED_TABLE_SIZE} give degenerate "
                "collision statistics",
                stacklevel=2,
            )
        self.sizes = sizes
        total = sum(sizes)
        try:
            self.tables = [np.zeros(s, dtype=np.uint8) for s in sizes]
        except MemoryError:
            raise FilterMemoryError(total) from None
        self._locks = [threading.Lock() for _ in sizes]
        self.n_occupied = [0] * len(sizes)
        self._sizes_u64 = [np.uint64(s) for s in sizes]

    @classmethod
    def from_tables(cls, k: int, tables: list[np.ndarray], batch_size: int = 512) -> CountingFilter:
        """Rebuild a filter around existing counter arrays (used by load)."""
        sizes = [int(t.size) for t in tables]
        config = FilterConfig(k=k, target_table_size=max(sizes), batch_size=batch_size)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            filt = cls(config, _sizes=sizes)
        filt.tables = tables
        filt.n_occupied = [int(np.count_nonzero(t)) for t in tables]
        return filt

    @property
    def total_bytes(self) -> int:
        return sum(self.sizes)

    def increment(self, code: int) -> int:
        """Saturating +1 in every table; returns min of the updated counters."""
        observed = 255
        for i, (table, size, lock) in enumerate(zip(self.tables, self.sizes, self._locks)):
            slot = code % size
            with lock:
                c = int(table[slot])
                if c == 0:
                    self.n_occupied[i] += 1
                if c != 255:
                    c += 1
                    table[slot] = c
            observed = min(observed, c)
        return observed

    def get_count(self, code: int) -> int:
        """Min over tables of the counter at code % size; never undercounts."""
        return min(int(t[code % s]) for t, s in zip(self.tables, self.sizes))

    def get_counts_bulk(self, codes: np.ndarray) -> np.ndarray:
        """Vectorized get_count for an array of codes."""
        if codes.size == 0:
            return np.empty(0, dtype=np.uint8)
        best = None
        for table, size in zip(self.tables, self._sizes_u64):
            counts = table[(codes % size).astype(np.int64)]
            best = counts if best is None else np.minimum(best, counts)
        return best

    def apply_codes(self, codes: np.ndarray) -> int:
        """Count an array of canonical codes, honoring the batch size.

        The array is applied in slices of at most batch_size codes; each
        slice goes to table 0 first, then table 1, and so on.  Returns
        the number of codes applied.
        """
        step = self.config.batch_size
        for start in range(0, codes.size, step):
            chunk = np.ascontiguousarray(codes[start:start + step])
            for i, (table, lock) in enumerate(zip(self.tables, self._locks)):
                with lock:
                    newly = _kernels.saturating_bump(table, chunk, self._sizes_u64[i])
                    self.n_occupied[i] += int(newly)
        return int(codes.size)

    def consume_sequence(self, sequence: bytes) -> int:
        """Normalize, split into valid runs, and count every k-mer instance.

        Returns the number of k-mer instances counted (0 for a sequence
        with no valid run of length >= k).
        """
        codes = canonical_codes(sequence, self.codec)
        return self.apply_codes(codes)

    def false_positive_rate(self) -> float:
        """Probability a never-inserted code reports nonzero: the product
        of per-table slot occupancies."""
        rate = 1.0
        for occupied, size in zip(self.n_occupied, self.sizes):
            rate *= occupied / size
        return rate


class HashBatch:
    """Accumulates canonical codes and flushes them in one locked pass
    per table, so consecutive updates to the same table stay cache-warm.
    """

    def __init__(self, filt: CountingFilter, capacity: int | None = None):
        self._filt = filt
        self.capacity = capacity if capacity is not None else filt.config.batch_size
        if self.capacity < 1:
            raise ValueError("batch capacity must be >= 1")
        self._pending = np.empty(self.capacity, dtype=np.uint64)
        self._fill = 0

    def __len__(self) -> int:
        return self._fill

    def add(self, code: int) -> None:
        self._pending[self._fill] = code
        self._fill += 1
        if self._fill == self.capacity:
            self.flush()

    def extend(self, codes: np.ndarray) -> None:
        pos = 0
        while pos < codes.size:
            take = min(self.capacity - self._fill, codes.size - pos)
            self._pending[self._fill:self._fill + take] = codes[pos:pos + take]
            self._fill += take
            pos += take
            if self._fill == self.capacity:
                self.flush()

    def flush(self) -> None:
        if self._fill:
            self._filt.apply_codes(self._pending[:self._fill])
            self._fill = 0
