from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmerpump.kmer import (
    EncodingError,
    KmerCodec,
    canonical_codes,
    canonical_codes_with_positions,
    count_positions,
    decode,
    encode,
    find_invalid,
    is_valid_dna,
    kmer_iterate,
    normalize_case,
    reverse_complement,
)

from conftest import oracle_canonical_kmers, random_read

dna = st.binary(min_size=0, max_size=200).map(
    lambda raw: bytes(b"ACGT"[b & 3] for b in raw)
)
messy = st.binary(min_size=0, max_size=200)


class TestNormalizeCase:
    def test_lowercase_becomes_uppercase(self):
        assert normalize_case(b"acgt") == b"ACGT"

    def test_uppercase_is_fixed_point(self):
        assert normalize_case(b"ACGT") == b"ACGT"

    def test_all_bytes_against_reference_uppercase(self):
        folded = normalize_case(bytes(range(256)))
        for b in range(256):
            if ord("a") <= b <= ord("z"):
                assert folded[b] == b - 32
            elif ord("A") <= b <= ord("Z"):
                assert folded[b] == b
            else:
                assert folded[b] == (b & 0xDF)

    @given(messy)
    def test_idempotent(self, seq):
        once = normalize_case(seq)
        assert normalize_case(once) == once

    def test_never_fabricates_valid_bases(self):
        # Only the 8 letter bytes may fold onto A/C/G/T.
        folded = normalize_case(bytes(range(256)))
        sources = [b for b in range(256) if folded[b] in b"ACGT"]
        assert sorted(sources) == sorted(b"ACGTacgt")


class TestValidation:
    def test_all_valid(self):
        assert is_valid_dna(b"ACGT")

    def test_ambiguous_base_position(self):
        assert not is_valid_dna(b"ACGN")
        assert find_invalid(b"ACGN") == 3

    def test_lowercase_valid_after_normalization(self):
        assert is_valid_dna(normalize_case(b"acgt"))

    def test_empty_is_valid(self):
        assert is_valid_dna(b"")


class TestEncode:
    def test_palindromic_two_mer(self):
        code = encode(b"AT", KmerCodec(2))
        assert (code.forward, code.reverse, code.canonical) == (1, 1, 1)

    def test_single_base_c(self):
        code = encode(b"C", KmerCodec(1))
        assert (code.forward, code.reverse, code.canonical) == (2, 3, 2)

    def test_reverse_complement_palindrome(self):
        codec = KmerCodec(4)
        assert reverse_complement(b"ACGT") == b"ACGT"
        assert encode(b"ACGT", codec).canonical == encode(reverse_complement(b"ACGT"), codec).canonical

    def test_invalid_byte_reports_index(self):
        with pytest.raises(EncodingError) as err:
            encode(b"ACNT", KmerCodec(4))
        assert err.value.index == 2

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            encode(b"ACG", KmerCodec(4))

    @given(dna.filter(lambda s: len(s) >= 1), st.integers(1, 32))
    @settings(max_examples=60)
    def test_strand_symmetry(self, seq, k):
        if len(seq) < k:
            seq = seq + b"A" * (k - len(seq))
        kmer = seq[:k]
        codec = KmerCodec(k)
        assert encode(kmer, codec).canonical == encode(reverse_complement(kmer), codec).canonical

    def test_codec_bounds(self):
        with pytest.raises(ValueError):
            KmerCodec(0)
        with pytest.raises(ValueError):
            KmerCodec(33)
        assert KmerCodec(32).forward_mask == 2**64 - 1


class TestDecode:
    def test_zero_is_a(self):
        assert decode(0, KmerCodec(1)) == b"A"

    def test_round_trip_gt(self):
        codec = KmerCodec(2)
        assert decode(encode(b"GT", codec).forward, codec) == b"GT"

    def test_exhaustive_k8_identity(self):
        codec = KmerCodec(8)
        for code in range(4**8):
            assert encode(decode(code, codec), codec).forward == code

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            decode(4, KmerCodec(1))


class TestIterate:
    def test_homopolymer_count(self):
        codec = KmerCodec(2)
        codes = list(kmer_iterate(b"AAAA", codec))
        assert len(codes) == 3
        assert all(c == encode(b"AA", codec) for c in codes)

    def test_invalid_byte_splits_runs(self):
        codec = KmerCodec(3)
        codes = list(kmer_iterate(b"ACGTNACG", codec))
        assert len(codes) == 3  # ACGT gives 2, ACG gives 1

    def test_short_runs_yield_nothing(self):
        assert list(kmer_iterate(b"ACNNGT", KmerCodec(3))) == []

    def test_rolling_equals_full_reencoding(self):
        rng = random.Random(2024)
        seq = random_read(rng, 200)
        rolled = [c.canonical for c in kmer_iterate(seq, KmerCodec(20))]
        assert len(rolled) == 181
        assert rolled == oracle_canonical_kmers(seq, 20)

    @given(messy, st.integers(1, 32))
    @settings(max_examples=60)
    def test_rolling_equivalence_property(self, seq, k):
        seq = normalize_case(seq)
        rolled = [c.canonical for c in kmer_iterate(seq, KmerCodec(k))]
        assert rolled == oracle_canonical_kmers(seq, k)

    @given(dna, st.integers(1, 32))
    @settings(max_examples=40)
    def test_count_formula(self, seq, k):
        got = sum(1 for _ in kmer_iterate(seq, KmerCodec(k)))
        assert got == count_positions(len(seq), k)


class TestBulkCodes:
    @given(messy, st.integers(1, 32))
    @settings(max_examples=60)
    def test_matches_iterator(self, seq, k):
        codec = KmerCodec(k)
        bulk = canonical_codes(seq, codec)
        assert bulk.dtype == np.uint64
        assert list(bulk) == [c.canonical for c in kmer_iterate(normalize_case(seq), codec)]

    def test_positions_track_run_splits(self):
        codec = KmerCodec(3)
        codes, positions = canonical_codes_with_positions(b"ACGTNACGT", codec)
        assert list(positions) == [0, 1, 5, 6]
        expected = canonical_codes(b"ACGTNACGT", codec)
        assert list(codes) == list(expected)

    def test_lowercase_input_fold(self):
        codec = KmerCodec(4)
        assert list(canonical_codes(b"acgtACGT", codec)) == list(canonical_codes(b"ACGTACGT", codec))
