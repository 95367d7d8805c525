"""Threaded counting pipeline: pump -> parse -> dispatch -> count.

One producer thread prefetches parsed records into segments; each
worker thread drains segments via its own dispatcher state, packs the
sequences of a segment into a single normalized buffer, and counts all
of its k-mers in a few compiled, lock-scoped passes.  Because counter
updates saturate and commute, the final tables are byte-identical for
any thread count or batch size.
"""
from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .kmer import BASE_LUT, normalize_case_array
from .metrics import MetricsAccumulator
from .seqio import (
    Format,
    ParseItem,
    PumpConfig,
    RecordDispatcher,
    SequenceRecord,
    open_pump,
    parse_records,
)
from .sketch import CountingFilter

SEGMENT_RECORDS = 4096


def pack_sequences(sequences: Sequence[bytes]) -> np.ndarray:
    """Concatenate reads into one uint8 buffer with 0xFF separators.

    0xFF stays invalid under case normalization, so run splitting in
    the encoder keeps reads from bleeding into each other.
    """
    total = sum(len(s) for s in sequences) + len(sequences)
    buf = np.empty(total, dtype=np.uint8)
    at = 0
    for seq in sequences:
        end = at + len(seq)
        buf[at:end] = np.frombuffer(seq, dtype=np.uint8)
        buf[end] = 0xFF
        at = end + 1
    return buf


def consume_records(filt: CountingFilter, records: Sequence[SequenceRecord]) -> int:
    """Count every k-mer of a batch of records; returns instances counted."""
    if not records:
        return 0
    buf = pack_sequences([r.sequence for r in records])
    normalize_case_array(buf)
    out = np.empty(buf.size, dtype=np.uint64)
    n = _kernels.canonical_codes_into(buf, BASE_LUT, filt.config.k, out)
    return filt.apply_codes(out[:n])


def count_stream(
    filt: CountingFilter,
    items: Iterable[ParseItem],
    n_threads: int = 1,
    metrics: MetricsAccumulator | None = None,
    segment_records: int = SEGMENT_RECORDS,
) -> dict:
    """Drive a parsed stream through the filter with worker threads.

    Returns a summary dict with reads/k-mers/error counts.  Worker
    errors propagate after all threads have joined.
    """
    _kernels.warm_up()
    dispatcher = RecordDispatcher(items, n_segments=n_threads, segment_records=segment_records)
    totals = {"reads": 0, "kmers": 0}
    totals_lock = threading.Lock()
    failures: list[BaseException] = []

    def worker() -> None:
        reads = 0
        kmers = 0
        if metrics is not None:
            metrics.start_timer("count")
        try:
            while True:
                batch = dispatcher.acquire_batch()
                if batch is None:
                    break
                kmers += consume_records(filt, batch)
                reads += len(batch)
        except BaseException as exc:
            failures.append(exc)
        finally:
            if metrics is not None:
                metrics.stop_timer("count")
            with totals_lock:
                totals["reads"] += reads
                totals["kmers"] += kmers

    threads = [threading.Thread(target=worker, name=f"counter-{i}") for i in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        raise failures[0]
    if metrics is not None:
        metrics.add_counter("reads_parsed", totals["reads"])
        metrics.add_counter("kmers_counted", totals["kmers"])
    return {
        "reads": totals["reads"],
        "kmers": totals["kmers"],
        "parse_errors": list(dispatcher.parse_errors),
    }


def count_file(
    filt: CountingFilter,
    path: str,
    n_threads: int = 1,
    pump_config: PumpConfig | None = None,
    fmt: Format = Format.AUTO,
    metrics: MetricsAccumulator | None = None,
) -> dict:
    """Count all k-mers of one input file into the filter."""
    chunks = open_pump(path, pump_config, metrics)
    return count_stream(filt, parse_records(chunks, fmt), n_threads, metrics)


def read_all_records(
    path: str,
    pump_config: PumpConfig | None = None,
    fmt: Format = Format.AUTO,
    metrics: MetricsAccumulator | None = None,
) -> tuple[list[SequenceRecord], list]:
    """Parse a whole file into memory; returns (records, parse_errors)."""
    records: list[SequenceRecord] = []
    errors = []
    for item in parse_records(open_pump(path, pump_config, metrics), fmt):
        if isinstance(item, SequenceRecord):
            records.append(item)
        else:
            errors.append(item)
    return records, errors
