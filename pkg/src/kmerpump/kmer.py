"""DNA byte-string normalization, validation, and 2-bit k-mer encoding.

Sequences are handled as ASCII byte strings.  Bases are packed two bits
each (A=0, T=1, C=2, G=3), so any k up to 32 fits a 64-bit code.  With
this encoding the complement of a base is its code XOR 1, and the
canonical form of a k-mer is the numeric minimum of its forward code and
the code of its reverse complement, so both strands count together.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from . import _kernels

MAX_K = 32

# b & 0xDF clears the ASCII lowercase bit for every byte in one pass.
# Lowercase letters become uppercase; bytes that were never valid bases
# stay invalid afterwards, so validation downstream is unaffected.
_CASEFOLD_TABLE = bytes(b & 0xDF for b in range(256))

_BASE_TO_CODE = {65: 0, 84: 1, 67: 2, 71: 3}  # A, T, C, G
_CODE_TO_BASE = b"ATCG"

# 256-entry base map for the vectorized path; invalid bytes get 255.
BASE_LUT = np.full(256, 255, dtype=np.uint8)
for _b, _c in _BASE_TO_CODE.items():
    BASE_LUT[_b] = _c

VALID_BASES = frozenset(b"ACGT")


class EncodingError(ValueError):
    """A byte that is not an uppercase A/C/G/T was given to the encoder."""

    def __init__(self, index: int, byte: int):
        self.index = index
        self.byte = byte
        super().__init__(f"invalid base {bytes([byte])!r} at index {index}")


@dataclass(frozen=True)
class KmerCodec:
    """k-mer size plus the derived bit constants; immutable and shareable."""

    k: int
    forward_mask: int = field(init=False)

    def __post_init__(self):
        if not 1 <= self.k <= MAX_K:
            raise ValueError(f"k must be in [1, {MAX_K}], got {self.k}")
        object.__setattr__(self, "forward_mask", (1 << (2 * self.k)) - 1)


class KmerCode(NamedTuple):
    forward: int
    reverse: int
    canonical: int


def normalize_case(sequence: bytes) -> bytes:
    """Clear bit 0x20 of every byte (the bitmask uppercase trick).

    Applied once per sequence, before validation; the validator and the
    encoder then never case-fold individual bytes.
    """
    return sequence.translate(_CASEFOLD_TABLE)


def normalize_case_array(buf: np.ndarray) -> np.ndarray:
    """In-place variant of :func:`normalize_case` for uint8 buffers."""
    np.bitwise_and(buf, 0xDF, out=buf)
    return buf


def is_valid_dna(sequence: bytes) -> bool:
    """Whole-sequence verdict: every byte is one of A/C/G/T.

    Expects case-normalized input; no per-byte case folding happens here.
    """
    return find_invalid(sequence) == -1


def find_invalid(sequence: bytes) -> int:
    """Index of the first byte outside {A, C, G, T}, or -1 if none."""
    for i, b in enumerate(sequence):
        if b not in VALID_BASES:
            return i
    return -1


def encode(kmer: bytes, codec: KmerCodec) -> KmerCode:
    """Pack one k-mer into forward, reverse-complement, and canonical codes.

    The first base lands in the most significant bit pair of the forward
    code.  Raises :class:`EncodingError` naming the offending index if a
    byte is not an uppercase valid base.
    """
    if len(kmer) != codec.k:
        raise ValueError(f"expected {codec.k} bases, got {len(kmer)}")
    forward = 0
    reverse = 0
    for i, b in enumerate(kmer):
        code = _BASE_TO_CODE.get(b)
        if code is None:
            raise EncodingError(i, b)
        forward = (forward << 2) | code
        reverse |= (code ^ 1) << (2 * i)
    return KmerCode(forward, reverse, min(forward, reverse))


def decode(code: int, codec: KmerCodec) -> bytes:
    """Inverse of the forward encoding: ``decode(encode(s).forward) == s``."""
    if not 0 <= code <= codec.forward_mask:
        raise ValueError(f"code {code} out of range for k={codec.k}")
    k = codec.k
    return bytes(_CODE_TO_BASE[(code >> (2 * (k - 1 - i))) & 3] for i in range(k))


def reverse_complement(sequence: bytes) -> bytes:
    """Reverse the sequence and swap A<->T, C<->G."""
    out = bytearray(len(sequence))
    for i, b in enumerate(reversed(sequence)):
        code = _BASE_TO_CODE.get(b)
        if code is None:
            raise EncodingError(len(sequence) - 1 - i, b)
        out[i] = _CODE_TO_BASE[code ^ 1]
    return bytes(out)


def kmer_iterate(sequence: bytes, codec: KmerCodec) -> Iterator[KmerCode]:
    """Yield the codes of every k-mer in the valid runs of a sequence.

    Invalid bytes split the sequence into maximal valid runs; a run of
    length L contributes L - k + 1 k-mers, runs shorter than k none.
    Codes are maintained incrementally: each step shifts the new base
    into the forward code and the complement into the high bit pair of
    the reverse code, rather than re-encoding the window.
    """
    k = codec.k
    mask = codec.forward_mask
    hi_shift = 2 * (k - 1)
    forward = 0
    reverse = 0
    run = 0
    for b in sequence:
        code = _BASE_TO_CODE.get(b)
        if code is None:
            run = 0
            forward = 0
            reverse = 0
            continue
        forward = ((forward << 2) | code) & mask
        reverse = (reverse >> 2) | ((code ^ 1) << hi_shift)
        run += 1
        if run >= k:
            yield KmerCode(forward, reverse, min(forward, reverse))


def canonical_codes(sequence: bytes | np.ndarray, codec: KmerCodec) -> np.ndarray:
    """Canonical codes of all k-mers in a sequence, as a uint64 array.

    Vectorized equivalent of taking ``.canonical`` from
    :func:`kmer_iterate`; this is the hot path used by the counting
    filter.  Accepts raw bytes or an already-normalized uint8 array.
    """
    if isinstance(sequence, np.ndarray):
        buf = sequence
    else:
        buf = np.frombuffer(normalize_case(sequence), dtype=np.uint8)
    out = np.empty(buf.size, dtype=np.uint64)
    n = _kernels.canonical_codes_into(buf, BASE_LUT, codec.k, out)
    return out[:n]


def canonical_codes_with_positions(
    sequence: bytes | np.ndarray, codec: KmerCodec
) -> tuple[np.ndarray, np.ndarray]:
    """Canonical codes plus each k-mer's start position in the sequence.

    Positions are base indices into the original read; they matter when
    invalid bytes split the read, because then the i-th emitted k-mer
    does not start at base i.
    """
    if isinstance(sequence, np.ndarray):
        buf = sequence
    else:
        buf = np.frombuffer(normalize_case(sequence), dtype=np.uint8)
    out = np.empty(buf.size, dtype=np.uint64)
    pos = np.empty(buf.size, dtype=np.int64)
    n = _kernels.canonical_codes_positions_into(buf, BASE_LUT, codec.k, out, pos)
    return out[:n], pos[:n]


def count_positions(length: int, k: int) -> int:
    """Number of k-mers in a fully valid sequence of the given length."""
    return max(length - k + 1, 0)
