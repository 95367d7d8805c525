from __future__ import annotations

import random
import threading
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmerpump.sketch import (
    CountingFilter,
    FilterConfig,
    HashBatch,
    is_prime,
    largest_primes_below,
)

from conftest import oracle_counts, random_reads


def sieve(limit: int) -> list[int]:
    flags = np.ones(limit + 1, dtype=bool)
    flags[:2] = False
    for p in range(2, int(limit**0.5) + 1):
        if flags[p]:
            flags[p * p:: p] = False
    return np.flatnonzero(flags).tolist()


def small_filter(k=4, target=101, n_tables=3, batch_size=512) -> CountingFilter:
    config = FilterConfig(k=k, target_table_size=target, n_tables=n_tables,
                          batch_size=batch_size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return CountingFilter(config)


class TestPrimes:
    def test_spec_sizes(self):
        assert largest_primes_below(101, 3) == [101, 97, 89]

    def test_against_sieve(self):
        primes = set(sieve(100_000))
        for n in range(2, 10_000):
            assert is_prime(n) == (n in primes)
        rng = random.Random(5)
        for _ in range(50):
            target = rng.randrange(1000, 100_000)
            want = [p for p in reversed(sieve(target)) if p <= target][:4]
            assert largest_primes_below(target, 4) == want

    def test_not_enough_primes(self):
        with pytest.raises(ValueError):
            largest_primes_below(5, 4)


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            FilterConfig(k=0, target_table_size=1000)
        with pytest.raises(ValueError):
            FilterConfig(k=33, target_table_size=1000)
        with pytest.raises(ValueError):
            FilterConfig(k=4, target_table_size=1000, n_tables=0)
        with pytest.raises(ValueError):
            FilterConfig(k=4, target_table_size=1000, batch_size=0)

    def test_small_tables_warn(self):
        with pytest.warns(UserWarning):
            CountingFilter(FilterConfig(k=4, target_table_size=101, n_tables=2))

    def test_sizes_are_distinct_primes(self):
        filt = CountingFilter(FilterConfig(k=20, target_table_size=10_000, n_tables=4))
        assert len(set(filt.sizes)) == 4
        assert all(is_prime(s) for s in filt.sizes)
        assert filt.sizes == sorted(filt.sizes, reverse=True)


class TestCounting:
    def test_fresh_filter_reads_zero(self):
        filt = small_filter()
        for code in (0, 1, 12345, 2**63):
            assert filt.get_count(code) == 0

    def test_single_table_degenerates_to_counter_array(self):
        filt = small_filter(n_tables=1)
        filt.increment(7)
        assert filt.get_count(7) == 1
        assert filt.get_count(7 + filt.sizes[0]) == 1  # same slot, as expected

    def test_first_increment_returns_one(self):
        filt = small_filter()
        assert filt.increment(99) == 1

    def test_saturation_at_255(self):
        filt = small_filter()
        for _ in range(300):
            filt.increment(42)
        assert filt.get_count(42) == 255

    def test_inserted_code_never_reads_zero(self):
        filt = small_filter()
        filt.increment(4096)
        assert filt.get_count(4096) >= 1

    def test_bulk_counts_match_scalar(self):
        filt = small_filter()
        rng = random.Random(11)
        codes = [rng.randrange(0, 256) for _ in range(200)]
        for code in codes:
            filt.increment(code)
        arr = np.array(codes[:50], dtype=np.uint64)
        bulk = filt.get_counts_bulk(arr)
        assert [filt.get_count(c) for c in codes[:50]] == list(bulk)

    def test_exact_regime_matches_dict_oracle(self):
        reads = random_reads(seed=3, n=300, length=80)
        k = 20
        filt = CountingFilter(FilterConfig(k=k, target_table_size=1_000_003, n_tables=4))
        for read in reads:
            filt.consume_sequence(read)
        oracle = oracle_counts(reads, k)
        overcounted = sum(
            1 for code, true in oracle.items() if filt.get_count(code) != min(true, 255)
        )
        assert all(filt.get_count(c) >= min(t, 255) for c, t in oracle.items())
        # ~18k distinct codes in 4 tables of ~1e6 slots: collisions are rare.
        assert overcounted / len(oracle) < 1e-3


class TestConsume:
    def test_length_rule(self):
        filt = small_filter(k=4)
        assert filt.consume_sequence(b"acgtacgt") == 5

    def test_fully_invalid_counts_nothing(self):
        filt = small_filter(k=2)
        assert filt.consume_sequence(b"NNNN") == 0

    def test_batch_size_equivalence(self):
        reads = random_reads(seed=9, n=1000, length=60)
        baseline = None
        for batch_size in (1, 64, 512, 4096):
            filt = small_filter(k=8, target=4999, n_tables=4, batch_size=batch_size)
            for read in reads:
                filt.consume_sequence(read)
            image = b"".join(t.tobytes() for t in filt.tables)
            if baseline is None:
                baseline = image
            else:
                assert image == baseline

    def test_thread_count_equivalence(self):
        rng = np.random.default_rng(17)
        codes = rng.integers(0, 2**63, size=100_000, dtype=np.uint64)

        def run(n_threads: int) -> bytes:
            filt = small_filter(k=8, target=4999, n_tables=4)
            chunks = np.array_split(codes, 64)
            pending = list(chunks)
            lock = threading.Lock()

            def worker():
                while True:
                    with lock:
                        if not pending:
                            return
                        chunk = pending.pop()
                    filt.apply_codes(chunk)

            threads = [threading.Thread(target=worker) for _ in range(n_threads)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            return b"".join(t.tobytes() for t in filt.tables)

        assert run(1) == run(4)

    def test_concurrent_increments_lose_nothing(self):
        filt = small_filter(k=8, target=4999, n_tables=2)
        code = 1234
        per_thread = 50

        def worker():
            for _ in range(per_thread):
                filt.increment(code)

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert filt.get_count(code) == 4 * per_thread


class TestFalsePositives:
    def test_empty_filter_rate_zero(self):
        assert small_filter().false_positive_rate() == 0.0

    def test_single_table_occupancy_ratio(self):
        filt = small_filter(n_tables=1, target=101)
        for code in range(50):  # distinct slots 0..49
            filt.increment(code)
        assert filt.false_positive_rate() == pytest.approx(50 / 101)

    def test_occupancy_tracks_nonzero_slots(self):
        filt = small_filter(k=8, target=4999, n_tables=3)
        rng = np.random.default_rng(23)
        filt.apply_codes(rng.integers(0, 2**63, size=3000, dtype=np.uint64))
        for occupied, table in zip(filt.n_occupied, filt.tables):
            assert occupied == int(np.count_nonzero(table))

    def test_monte_carlo_prediction(self):
        filt = CountingFilter(FilterConfig(k=20, target_table_size=99_991, n_tables=4))
        rng = np.random.default_rng(29)
        inserted = rng.integers(0, 2**62, size=20_000, dtype=np.uint64) * 2  # even codes
        filt.apply_codes(inserted)
        predicted = filt.false_positive_rate()
        queries = rng.integers(0, 2**62, size=50_000, dtype=np.uint64) * 2 + 1  # odd: fresh
        hits = int(np.count_nonzero(filt.get_counts_bulk(queries)))
        n = queries.size
        sigma = (predicted * (1 - predicted) / n) ** 0.5
        assert abs(hits / n - predicted) <= 3 * sigma + 1e-9


class TestProperties:
    @given(st.lists(st.tuples(st.integers(0, 2**63), st.integers(1, 300)),
                    min_size=0, max_size=30))
    @settings(max_examples=40, deadline=None)
    def test_no_false_negatives(self, inserts):
        filt = small_filter(k=8, target=4999, n_tables=3)
        for code, times in inserts:
            for _ in range(times):
                filt.increment(code)
        totals: dict[int, int] = {}
        for code, times in inserts:
            totals[code] = totals.get(code, 0) + times
        for code, total in totals.items():
            assert filt.get_count(code) >= min(total, 255)

    def test_monotonicity(self):
        filt = small_filter(k=8, target=4999, n_tables=3)
        rng = np.random.default_rng(31)
        watched = int(rng.integers(0, 2**62))
        last = filt.get_count(watched)
        for _ in range(20):
            filt.apply_codes(rng.integers(0, 2**63, size=500, dtype=np.uint64))
            now = filt.get_count(watched)
            assert now >= last
            last = now


class TestHashBatch:
    def test_flush_on_capacity(self):
        filt = small_filter(k=8, target=4999, n_tables=2)
        batch = HashBatch(filt, capacity=4)
        for code in (10, 20, 30):
            batch.add(code)
        assert len(batch) == 3
        assert filt.get_count(10) == 0  # still pending
        batch.add(40)
        assert len(batch) == 0
        assert filt.get_count(10) == 1

    def test_equivalence_with_unbatched(self):
        rng = np.random.default_rng(37)
        codes = rng.integers(0, 2**63, size=5000, dtype=np.uint64)
        direct = small_filter(k=8, target=4999, n_tables=3, batch_size=1)
        batched = small_filter(k=8, target=4999, n_tables=3)
        for code in codes:
            direct.increment(int(code))
        hb = HashBatch(batched, capacity=256)
        hb.extend(codes)
        hb.flush()
        for a, b in zip(direct.tables, batched.tables):
            assert a.tobytes() == b.tobytes()
