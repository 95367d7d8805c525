"""Shared corpus builders and oracles for the test suite.

Oracles here are deliberately independent of the library's fast paths:
canonical k-mer enumeration re-encodes every window from scratch via
the scalar encoder, and exact counts come from a plain dict.
"""
from __future__ import annotations

import gzip
import random
from collections import Counter
from pathlib import Path

import pytest

from kmerpump import _kernels
from kmerpump.kmer import KmerCodec, encode, find_invalid, normalize_case

BASES = b"ACGT"


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Pay the one-time JIT cost before any timed test runs.
    _kernels.warm_up()


def random_read(rng: random.Random, length: int = 100) -> bytes:
    return bytes(rng.choice(BASES) for _ in range(length))


def random_reads(seed: int, n: int, length: int = 100) -> list[bytes]:
    rng = random.Random(seed)
    return [random_read(rng, length) for _ in range(n)]


def oracle_canonical_kmers(sequence: bytes, k: int) -> list[int]:
    """Every k-mer's canonical code by full per-window re-encoding."""
    codec = KmerCodec(k)
    seq = normalize_case(sequence)
    out = []
    for i in range(len(seq) - k + 1):
        window = seq[i:i + k]
        if find_invalid(window) != -1:
            continue
        out.append(encode(window, codec).canonical)
    return out


def oracle_counts(reads: list[bytes], k: int) -> Counter:
    """Exact canonical k-mer multiset over a corpus."""
    counts: Counter = Counter()
    for read in reads:
        counts.update(oracle_canonical_kmers(read, k))
    return counts


def fastq_bytes(names: list[str], seqs: list[bytes], quals: list[bytes] | None = None) -> bytes:
    parts = []
    for i, (name, seq) in enumerate(zip(names, seqs)):
        qual = quals[i] if quals is not None else b"I" * len(seq)
        parts.append(b"@" + name.encode() + b"\n" + seq + b"\n+\n" + qual + b"\n")
    return b"".join(parts)


def fasta_bytes(names: list[str], seqs: list[bytes]) -> bytes:
    return b"".join(b">" + n.encode() + b"\n" + s + b"\n" for n, s in zip(names, seqs))


def write_corpus(path: Path, data: bytes) -> Path:
    if str(path).endswith(".gz"):
        with gzip.open(path, "wb") as fh:
            fh.write(data)
    else:
        path.write_bytes(data)
    return path


def corrupt_fastq_corpus(
    n_records: int = 1000, n_corrupt: int = 17, seed: int = 42, read_length: int = 80
) -> tuple[bytes, list[str], list[str]]:
    """A FASTQ corpus with known records corrupted in place.

    Returns (file bytes, all names, surviving good names in file order).
    Corruptions rotate through: header marker destroyed, quality one
    byte short, sequence emptied, '+' separator mangled.
    """
    rng = random.Random(seed)
    names = [f"read{i:05d}/1" for i in range(n_records)]
    seqs = [random_read(rng, read_length) for _ in range(n_records)]
    # Adjacent corrupted records can merge into one resync scan, which
    # would make the per-record error accounting ambiguous; keep a good
    # record between any two corruptions.
    while True:
        corrupt_at = sorted(rng.sample(range(n_records), n_corrupt))
        if all(b - a > 1 for a, b in zip(corrupt_at, corrupt_at[1:])):
            break
    corrupt_set = set(corrupt_at)
    chunks = []
    for i, (name, seq) in enumerate(zip(names, seqs)):
        qual = bytes(rng.randrange(33, 74) for _ in range(len(seq)))
        record = [b"@" + name.encode(), seq, b"+", qual]
        if i in corrupt_set:
            mode = corrupt_at.index(i) % 4
            if mode == 0:
                record[0] = b"X" + name.encode()  # header marker gone
            elif mode == 1:
                record[3] = qual[:-1]  # quality too short
            elif mode == 2:
                record[1] = b""  # sequence emptied
            else:
                record[2] = b"*"  # separator mangled
        chunks.append(b"\n".join(record) + b"\n")
    good_names = [n for i, n in enumerate(names) if i not in corrupt_set]
    return b"".join(chunks), names, good_names
