"""kmerpump: streaming k-mer counting and read preprocessing.

A tunable data pump feeds a FASTA/FASTQ parser; reads decompose into
canonical 2-bit k-mers counted in a multi-table saturating Bloom
filter; abundance-based filters (digital normalization, low-abundance
trimming) sit on top.  The same pieces are exposed as a library here
and as the ``kmerpump`` command line tool.
"""

from .filters import (
    AbundanceCutoff,
    AbundanceStats,
    NoKmersError,
    ReadDecision,
    Verdict,
    abundance_distribution,
    filter_abund,
    median_kmer_count,
    normalize_by_median,
)
from .kmer import (
    KmerCode,
    KmerCodec,
    canonical_codes,
    decode,
    encode,
    is_valid_dna,
    kmer_iterate,
    normalize_case,
    reverse_complement,
)
from .metrics import MetricsAccumulator, SpeedupModel, fit_parallel_fraction, render_report
from .persist import (
    CorruptFilterFileError,
    NotAFilterFileError,
    UnsupportedVersionError,
    load_filter,
    save_filter,
)
from .seqio import (
    Format,
    ParseError,
    ParseErrorKind,
    PumpConfig,
    RecordDispatcher,
    SequenceRecord,
    open_pump,
    parse_records,
)
from .sketch import CountingFilter, FilterConfig, HashBatch, largest_primes_below

__version__ = "0.1.0"

__all__ = [
    "AbundanceCutoff",
    "AbundanceStats",
    "CorruptFilterFileError",
    "CountingFilter",
    "FilterConfig",
    "Format",
    "HashBatch",
    "KmerCode",
    "KmerCodec",
    "MetricsAccumulator",
    "NoKmersError",
    "NotAFilterFileError",
    "ParseError",
    "ParseErrorKind",
    "PumpConfig",
    "ReadDecision",
    "RecordDispatcher",
    "SequenceRecord",
    "SpeedupModel",
    "UnsupportedVersionError",
    "Verdict",
    "abundance_distribution",
    "canonical_codes",
    "decode",
    "encode",
    "filter_abund",
    "fit_parallel_fraction",
    "is_valid_dna",
    "kmer_iterate",
    "largest_primes_below",
    "load_filter",
    "median_kmer_count",
    "normalize_by_median",
    "normalize_case",
    "open_pump",
    "parse_records",
    "render_report",
    "reverse_complement",
    "save_filter",
    "__version__",
]
