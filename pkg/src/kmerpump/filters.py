"""Abundance-based read preprocessing on top of the counting filter.

Digital normalization is an online, single-pass downsampler: a read is
kept only while the median abundance of its k-mers (against the filter
built so far) is below the coverage cutoff, and only kept reads feed
the filter.  Abundance trimming is the two-pass companion: with a
pre-counted filter, a read is truncated at its first k-mer whose count
falls below the cutoff, treating the low-abundance tail as probable
sequencing error.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .kmer import canonical_codes, canonical_codes_with_positions
from .seqio import SequenceRecord
from .sketch import CountingFilter


class Verdict(enum.Enum):
    KEEP = "keep"
    DISCARD = "discard"
    TRIMMED = "trimmed"


@dataclass(frozen=True)
class AbundanceCutoff:
    """Coverage threshold; bounded by the 255 counter saturation point."""

    cutoff: int

    def __post_init__(self):
        if not 1 <= self.cutoff <= 255:
            raise ValueError(f"cutoff must be in [1, 255], got {self.cutoff}")


@dataclass(frozen=True)
class ReadDecision:
    """Audit record for one read passing through a preprocessing step."""

    verdict: Verdict
    median_abundance: int
    trim_length: int | None = None
    reason: str | None = None


class AbundanceStats(NamedTuple):
    median: int
    mean: float
    stddev: float


class NoKmersError(ValueError):
    """The read has no valid run of length >= k, so no abundance exists."""


def _lower_median(counts: np.ndarray) -> int:
    return int(np.sort(counts)[(counts.size - 1) // 2])


def _read_counts(filt: CountingFilter, sequence: bytes) -> tuple[np.ndarray, np.ndarray]:
    codes = canonical_codes(sequence, filt.codec)
    return codes, filt.get_counts_bulk(codes)


def median_kmer_count(filt: CountingFilter, sequence: bytes) -> AbundanceStats:
    """Median (lower), mean, and population stddev of the read's k-mer counts.

    Raises NoKmersError for reads whose valid runs are all shorter than
    k; that case is a distinct signal, not a zero median.
    """
    _, counts = _read_counts(filt, sequence)
    if counts.size == 0:
        raise NoKmersError("read yields no k-mers")
    counts64 = counts.astype(np.int64)
    return AbundanceStats(
        median=_lower_median(counts),
        mean=float(counts64.mean()),
        stddev=float(counts64.std()),
    )


def normalize_by_median(
    records: Iterable[SequenceRecord],
    filt: CountingFilter,
    cutoff: AbundanceCutoff | int,
) -> Iterator[tuple[SequenceRecord | None, ReadDecision]]:
    """Online digital normalization: keep while median abundance < cutoff.

    For each record in order: compute the median k-mer count against
    the filter as it currently stands; below the cutoff, the record is
    kept and its k-mers are counted into the filter, otherwise it is
    discarded and the filter is left untouched.  Yields
    (record-or-None, decision) pairs; the kept records form a
    subsequence of the input.  Order-sensitive, hence single-threaded.
    """
    limit = cutoff.cutoff if isinstance(cutoff, AbundanceCutoff) else AbundanceCutoff(cutoff).cutoff
    for record in records:
        codes, counts = _read_counts(filt, record.sequence)
        if counts.size == 0:
            yield None, ReadDecision(Verdict.DISCARD, 0, reason="no k-mers")
            continue
        median = _lower_median(counts)
        if median < limit:
            filt.apply_codes(codes)
            yield record, ReadDecision(Verdict.KEEP, median)
        else:
            yield None, ReadDecision(Verdict.DISCARD, median, reason="median at cutoff")


def filter_abund(
    records: Iterable[SequenceRecord],
    filt: CountingFilter,
    cutoff: AbundanceCutoff | int,
) -> Iterator[tuple[SequenceRecord | None, ReadDecision]]:
    """Trim each read at its first k-mer whose count is below the cutoff.

    The filter must already be populated (two-pass usage) and is only
    read, so this is safe to run concurrently over disjoint records.
    A read trimmed to fewer than k bases is dropped instead.
    """
    limit = cutoff.cutoff if isinstance(cutoff, AbundanceCutoff) else AbundanceCutoff(cutoff).cutoff
    k = filt.config.k
    for record in records:
        yield trim_record(record, filt, limit, k)


def trim_record(
    record: SequenceRecord, filt: CountingFilter, limit: int, k: int
) -> tuple[SequenceRecord | None, ReadDecision]:
    codes, positions = canonical_codes_with_positions(record.sequence, filt.codec)
    counts = filt.get_counts_bulk(codes)
    if counts.size == 0:
        return record, ReadDecision(Verdict.KEEP, 0, reason="no k-mers")
    median = _lower_median(counts)
    low = np.flatnonzero(counts < limit)
    if low.size == 0:
        return record, ReadDecision(Verdict.KEEP, median)
    # Base position, not code index: invalid bytes may have split the read.
    first_low = int(positions[low[0]])
    trim_length = first_low + k - 1
    if trim_length < k:
        return None, ReadDecision(Verdict.DISCARD, median, reason="first k-mer below cutoff")
    trimmed = SequenceRecord(
        name=record.name,
        sequence=record.sequence[:trim_length],
        description=record.description,
        quality=record.quality[:trim_length] if record.quality is not None else None,
        source_format=record.source_format,
    )
    return trimmed, ReadDecision(Verdict.TRIMMED, median, trim_length=trim_length)


def abundance_distribution(
    records: Iterable[SequenceRecord], filt: CountingFilter
) -> np.ndarray:
    """Histogram over counter values: slot c holds the number of k-mer
    instances across the stream whose queried count is c."""
    histogram = np.zeros(256, dtype=np.int64)
    for record in records:
        _, counts = _read_counts(filt, record.sequence)
        if counts.size:
            histogram += np.bincount(counts, minlength=256)
    return histogram
