"""Bit-exact save/load of counting-filter state.

Layout: an 8-byte fixed header (magic "KCT1", version, k, table count,
flags), then one little-endian uint64 per table size, then each table's
raw counter bytes in order.  Everything is fixed-width, so the file
length is fully determined by the header and any truncation is
detectable.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .sketch import CountingFilter

MAGIC = b"KCT1"
VERSION = 1
_FIXED = struct.Struct("<4sBBBB")  # magic, version, k, n_tables, flags


class FilterFileError(ValueError):
    """Base class for unreadable filter files."""


class NotAFilterFileError(FilterFileError):
    pass


class UnsupportedVersionError(FilterFileError):
    pass


class CorruptFilterFileError(FilterFileError):
    pass


class FilterWriteError(OSError):
    """Save failed partway; bytes_written says how far it got."""

    def __init__(self, bytes_written: int, cause: OSError):
        self.bytes_written = bytes_written
        super().__init__(f"write failed after {bytes_written} bytes: {cause}")


def header_bytes(filt: CountingFilter) -> bytes:
    fixed = _FIXED.pack(MAGIC, VERSION, filt.config.k, len(filt.sizes), 0)
    return fixed + struct.pack(f"<{len(filt.sizes)}Q", *filt.sizes)


def expected_file_length(k: int, sizes: list[int]) -> int:
    return _FIXED.size + 8 * len(sizes) + sum(sizes)


def save_filter(filt: CountingFilter, path: str) -> int:
    """Write header then raw tables; returns total bytes written.

    Requires exclusive access: concurrent increments during a save are
    a contract violation (the snapshot would be torn).
    """
    written = 0
    try:
        with open(path, "wb") as fh:
            written += fh.write(header_bytes(filt))
            for table in filt.tables:
                written += fh.write(memoryview(table))
    except OSError as exc:
        raise FilterWriteError(written, exc) from exc
    return written


def read_header(fh) -> tuple[int, int, list[int]]:
    """Parse and validate the header; returns (version, k, sizes)."""
    fixed = fh.read(_FIXED.size)
    if len(fixed) < _FIXED.size:
        raise NotAFilterFileError("file too short for a filter header")
    magic, version, k, n_tables, _flags = _FIXED.unpack(fixed)
    if magic != MAGIC:
        raise NotAFilterFileError(f"bad magic {magic!r}; not a filter file")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported filter file version {version}")
    raw_sizes = fh.read(8 * n_tables)
    if len(raw_sizes) < 8 * n_tables:
        raise CorruptFilterFileError("header truncated before table sizes")
    sizes = list(struct.unpack(f"<{n_tables}Q", raw_sizes))
    return version, k, sizes


def load_filter(path: str, batch_size: int = 512) -> CountingFilter:
    """Reconstruct a filter whose queries match the saved one exactly."""
    file_length = os.path.getsize(path)
    with open(path, "rb") as fh:
        _, k, sizes = read_header(fh)
        expected = expected_file_length(k, sizes)
        if file_length != expected:
            raise CorruptFilterFileError(
                f"file is {file_length} bytes, header implies {expected}"
            )
        tables = []
        for size in sizes:
            raw = fh.read(size)
            if len(raw) < size:
                raise CorruptFilterFileError("table data truncated")
            tables.append(np.frombuffer(raw, dtype=np.uint8).copy())
    return CountingFilter.from_tables(k, tables, batch_size=batch_size)


def describe(path: str) -> dict:
    """Header fields of a filter file, for the CLI info subcommand."""
    with open(path, "rb") as fh:
        version, k, sizes = read_header(fh)
    return {
        "path": path,
        "version": version,
        "k": k,
        "n_tables": len(sizes),
        "table_sizes": sizes,
        "table_bytes": sum(sizes),
        "file_bytes": expected_file_length(k, sizes),
    }
