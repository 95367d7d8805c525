"""The data pump and record parser.

The pump moves bytes from storage into memory as fixed-size chunks,
optionally bypassing the OS page cache (O_DIRECT with block-aligned
reads) or widening the kernel readahead window (posix_fadvise).  The
parser turns the chunk stream into validated FASTA/FASTQ records,
emitting in-stream error items for malformed records and resuming at
the next record-start marker, so one bad record never costs the rest of
the file.

A parsed stream can be consumed concurrently through RecordDispatcher:
a single producer prefetches records into segments, and up to
n_segments consumer threads each drain their own segment, keyed by
thread id.  Every record is delivered exactly once.
"""
from __future__ import annotations

import enum
import gzip
import mmap
import os
import queue
import sys
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

DEFAULT_CHUNK_SIZE = 4 * 1024 * 1024
DEFAULT_BLOCK_SIZE = 4096


class Format(enum.Enum):
    FASTA = "fasta"
    FASTQ = "fastq"
    AUTO = "auto"


class ParseErrorKind(enum.Enum):
    MALFORMED_HEADER = "malformed_header"
    TRUNCATED_RECORD = "truncated_record"
    QUALITY_LENGTH_MISMATCH = "quality_length_mismatch"
    EMPTY_SEQUENCE = "empty_sequence"
    IO_FAILURE = "io_failure"


@dataclass(frozen=True)
class ParseError:
    """In-stream marker for one malformed record (or an I/O failure)."""

    kind: ParseErrorKind
    byte_offset: int
    detail: str


@dataclass
class SequenceRecord:
    """One genomic read as parsed, bytes kept verbatim.

    The name keeps any pairing suffix exactly as found in the file;
    quality is present iff the record came from FASTQ.
    """

    name: str
    sequence: bytes
    description: str | None = None
    quality: bytes | None = None
    source_format: Format = Format.FASTA

    def __post_init__(self):
        if not self.name:
            raise ValueError("record name must be non-empty")
        if self.quality is not None and len(self.quality) != len(self.sequence):
            raise ValueError("quality length must match sequence length")


ParseItem = Union[SequenceRecord, ParseError]


@dataclass(frozen=True)
class PumpConfig:
    """Chunking, readahead, and cache-bypass knobs for the data pump."""

    chunk_size: int = DEFAULT_CHUNK_SIZE
    readahead_hint: int = 0
    cache_bypass: bool = False
    block_size: int = DEFAULT_BLOCK_SIZE
    n_segments: int = 1

    def __post_init__(self):
        if self.chunk_size <= 0:
            raise ValueError("chunk_size must be positive")
        if self.cache_bypass and self.chunk_size % self.block_size != 0:
            raise ValueError("chunk_size must be a multiple of block_size for cache bypass")
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")


def _advise_sequential(fd: int, hint: int) -> None:
    # Only a hint; absence of the syscall or an unsupported fd is fine.
    try:
        os.posix_fadvise(fd, 0, hint, os.POSIX_FADV_SEQUENTIAL)
    except (AttributeError, OSError):
        pass


def _warn(metrics, message: str) -> None:
    if metrics is not None:
        metrics.warn(message)


def _buffered_chunks(path: str, config: PumpConfig, metrics) -> Iterator[bytes]:
    with open(path, "rb") as fh:
        if config.readahead_hint > 0:
            _advise_sequential(fh.fileno(), config.readahead_hint)
        while True:
            chunk = fh.read(config.chunk_size)
            if not chunk:
                return
            if metrics is not None:
                metrics.add_counter("bytes_read", len(chunk))
            yield chunk


def _direct_chunks(path: str, config: PumpConfig, metrics) -> Iterator[bytes]:
    """Read with O_DIRECT into a page-aligned buffer.

    Reads are issued in chunk_size units (a block-size multiple) at
    block-aligned offsets; the kernel returns a short read at EOF, so
    the delivered byte stream is identical to the buffered one.  Falls
    back to buffered reading if the filesystem refuses direct I/O.
    """
    flags = os.O_RDONLY | getattr(os, "O_DIRECT", 0)
    if not getattr(os, "O_DIRECT", 0):
        _warn(metrics, f"cache bypass unsupported on this platform; buffered read of {path}")
        yield from _buffered_chunks(path, config, metrics)
        return
    try:
        fd = os.open(path, flags)
    except OSError as exc:
        _warn(metrics, f"cache bypass unavailable for {path} ({exc.strerror}); buffered fallback")
        yield from _buffered_chunks(path, config, metrics)
        return
    offset = 0
    buf = mmap.mmap(-1, config.chunk_size)  # anonymous mapping: page-aligned
    try:
        if config.readahead_hint > 0:
            _advise_sequential(fd, config.readahead_hint)
        while True:
            try:
                n = os.preadv(fd, [buf], offset)
            except OSError as exc:
                # Some filesystems accept O_DIRECT at open but fail reads.
                _warn(metrics, f"direct read failed at offset {offset} ({exc.strerror}); "
                               "buffered fallback")
                os.close(fd)
                fd = -1
                yield from _resume_buffered(path, config, metrics, offset)
                return
            if n == 0:
                return
            if metrics is not None:
                metrics.add_counter("bytes_read", n)
            yield bytes(buf[:n])
            offset += n
            if n < config.chunk_size:
                return
    finally:
        buf.close()
        if fd >= 0:
            os.close(fd)


def _resume_buffered(path: str, config: PumpConfig, metrics, offset: int) -> Iterator[bytes]:
    with open(path, "rb") as fh:
        fh.seek(offset)
        while True:
            chunk = fh.read(config.chunk_size)
            if not chunk:
                return
            if metrics is not None:
                metrics.add_counter("bytes_read", len(chunk))
            yield chunk


def _stdin_chunks(config: PumpConfig, metrics) -> Iterator[bytes]:
    stream = sys.stdin.buffer
    while True:
        chunk = stream.read(config.chunk_size)
        if not chunk:
            return
        if metrics is not None:
            metrics.add_counter("bytes_read", len(chunk))
        yield chunk


def _gzip_chunks(path: str, config: PumpConfig, metrics) -> Iterator[bytes]:
    if config.cache_bypass:
        _warn(metrics, f"cache bypass defeated by gzip decompression of {path}")
    with gzip.open(path, "rb") as fh:
        while True:
            chunk = fh.read(config.chunk_size)
            if not chunk:
                return
            if metrics is not None:
                metrics.add_counter("bytes_read", len(chunk))
            yield chunk


def open_pump(path: str, config: PumpConfig | None = None, metrics=None) -> Iterator[bytes]:
    """Yield a file's bytes exactly once, in order, in chunk_size pieces.

    ``-`` reads standard input; ``*.gz`` is decompressed transparently
    (which defeats cache bypass).  The concatenation of the yielded
    chunks is always byte-identical to the file regardless of chunking,
    readahead, or cache-bypass settings.
    """
    config = config or PumpConfig()
    if path == "-":
        return _stdin_chunks(config, metrics)
    if path.endswith(".gz"):
        return _gzip_chunks(path, config, metrics)
    if config.cache_bypass:
        return _direct_chunks(path, config, metrics)
    return _buffered_chunks(path, config, metrics)


def _lines_with_offsets(chunks: Iterable[bytes]) -> Iterator[tuple[int, bytes]]:
    """Split a chunk stream into (start_offset, line) pairs.

    Lines exclude the newline; a trailing carriage return is stripped.
    The final line is yielded even without a terminating newline.
    """
    offset = 0
    carry = b""
    for chunk in chunks:
        data = carry + chunk if carry else chunk
        lines = data.split(b"\n")
        carry = lines.pop()
        for line in lines:
            length = len(line) + 1
            if line.endswith(b"\r"):
                line = line[:-1]
            yield offset, line
            offset += length
    if carry:
        if carry.endswith(b"\r"):
            carry = carry[:-1]
        yield offset, carry


class _LineSource:
    """Line iterator with lookahead, for resynchronization scans."""

    def __init__(self, lines: Iterator[tuple[int, bytes]]):
        self._lines = lines
        self._buffer: deque[tuple[int, bytes]] = deque()

    def peek(self, i: int = 0) -> tuple[int, bytes] | None:
        while len(self._buffer) <= i:
            try:
                self._buffer.append(next(self._lines))
            except StopIteration:
                return None
        return self._buffer[i]

    def take(self) -> tuple[int, bytes] | None:
        if self._buffer:
            return self._buffer.popleft()
        try:
            return next(self._lines)
        except StopIteration:
            return None


def _split_header(line: bytes) -> tuple[str, str | None]:
    fields = line[1:].split(None, 1)
    if not fields:
        return "", None
    name = fields[0].decode("latin-1")
    description = fields[1].decode("latin-1") if len(fields) > 1 else None
    return name, description


def _parse_fasta(src: _LineSource) -> Iterator[ParseItem]:
    header: tuple[int, str, str | None] | None = None
    parts: list[bytes] = []
    skipping = False
    while True:
        item = src.take()
        if item is None:
            break
        offset, line = item
        if not line:
            continue
        if line.startswith(b">"):
            if header is not None:
                yield _finish_fasta(header, parts)
            parts = []
            skipping = False
            name, description = _split_header(line)
            if not name:
                yield ParseError(ParseErrorKind.MALFORMED_HEADER, offset, "empty record name")
                header = None
                skipping = True
            else:
                header = (offset, name, description)
        elif skipping:
            continue
        elif header is None:
            yield ParseError(ParseErrorKind.MALFORMED_HEADER, offset,
                             "sequence data before any record header")
            skipping = True
        else:
            parts.append(line)
    if header is not None:
        yield _finish_fasta(header, parts)


def _finish_fasta(header: tuple[int, str, str | None], parts: list[bytes]) -> ParseItem:
    offset, name, description = header
    if not parts:
        return ParseError(ParseErrorKind.EMPTY_SEQUENCE, offset, f"record {name!r} has no sequence")
    sequence = parts[0] if len(parts) == 1 else b"".join(parts)
    return SequenceRecord(name=name, sequence=sequence, description=description,
                          source_format=Format.FASTA)


def _looks_like_fastq_start(src: _LineSource, i: int) -> bool:
    item = src.peek(i)
    if item is None or not item[1].startswith(b"@"):
        return False
    plus = src.peek(i + 2)
    # A quality line can begin with '@'; a real header has '+' two lines on
    # (or sits at EOF, where the truncation will be reported on its own).
    return plus is None or plus[1].startswith(b"+")


def _resync_fastq(src: _LineSource) -> None:
    while True:
        item = src.peek(0)
        if item is None:
            return
        if item[1].startswith(b"@") and _looks_like_fastq_start(src, 0):
            return
        src.take()


def _parse_fastq(src: _LineSource) -> Iterator[ParseItem]:
    while True:
        item = src.take()
        if item is None:
            return
        offset, header = item
        if not header:
            continue
        if not header.startswith(b"@"):
            yield ParseError(ParseErrorKind.MALFORMED_HEADER, offset,
                             f"expected '@' record marker, got {header[:1]!r}")
            _resync_fastq(src)
            continue
        name, description = _split_header(header)
        if not name:
            yield ParseError(ParseErrorKind.MALFORMED_HEADER, offset, "empty record name")
            _resync_fastq(src)
            continue
        seq_item = src.take()
        plus_item = src.take() if seq_item is not None else None
        qual_item = src.take() if plus_item is not None else None
        if qual_item is None:
            yield ParseError(ParseErrorKind.TRUNCATED_RECORD, offset,
                             f"record {name!r} cut off at end of input")
            return
        _, sequence = seq_item
        plus_offset, plus = plus_item
        _, quality = qual_item
        if not plus.startswith(b"+"):
            yield ParseError(ParseErrorKind.TRUNCATED_RECORD, plus_offset,
                             f"record {name!r} missing '+' separator")
            _resync_fastq(src)
            continue
        if not sequence:
            yield ParseError(ParseErrorKind.EMPTY_SEQUENCE, offset,
                             f"record {name!r} has an empty sequence")
            continue
        if len(quality) != len(sequence):
            yield ParseError(ParseErrorKind.QUALITY_LENGTH_MISMATCH, offset,
                             f"record {name!r}: {len(quality)} quality bytes for "
                             f"{len(sequence)} bases")
            continue
        yield SequenceRecord(name=name, sequence=sequence, description=description,
                             quality=quality, source_format=Format.FASTQ)


def parse_records(chunks: Iterable[bytes], fmt: Format = Format.AUTO) -> Iterator[ParseItem]:
    """Parse a byte-chunk stream into records and in-stream error items.

    Records come out in file order; a malformed record yields one
    ParseError and parsing resumes at the next record-start marker.  An
    I/O failure underneath the stream yields a terminal IoFailure item.
    """
    offset_seen = 0
    try:
        src = _LineSource(_lines_with_offsets(chunks))
        if fmt is Format.AUTO:
            fmt = _sniff_format(src)
            if fmt is None:
                first = src.peek(0)
                if first is not None:
                    yield ParseError(ParseErrorKind.MALFORMED_HEADER, first[0],
                                     "input is neither FASTA ('>') nor FASTQ ('@')")
                return
        parser = _parse_fasta if fmt is Format.FASTA else _parse_fastq
        for item in parser(src):
            if isinstance(item, ParseError):
                offset_seen = max(offset_seen, item.byte_offset)
            yield item
    except OSError as exc:
        yield ParseError(ParseErrorKind.IO_FAILURE, offset_seen, str(exc))


def _sniff_format(src: _LineSource) -> Format | None:
    i = 0
    while True:
        item = src.peek(i)
        if item is None:
            return Format.FASTA  # empty input parses as zero records either way
        stripped = item[1].lstrip()
        if stripped:
            if stripped.startswith(b">"):
                return Format.FASTA
            if stripped.startswith(b"@"):
                return Format.FASTQ
            return None
        i += 1


def format_record(record: SequenceRecord) -> bytes:
    """Serialize one record back to its source format."""
    title = record.name if record.description is None else f"{record.name} {record.description}"
    header = title.encode("latin-1")
    if record.source_format is Format.FASTQ:
        return b"@" + header + b"\n" + record.sequence + b"\n+\n" + (record.quality or b"") + b"\n"
    return b">" + header + b"\n" + record.sequence + b"\n"


def write_records(handle, records: Iterable[SequenceRecord]) -> int:
    """Write records to a binary handle; returns the record count."""
    n = 0
    for record in records:
        handle.write(format_record(record))
        n += 1
    return n


class DispatchContractError(RuntimeError):
    """More distinct thread ids called acquire_record than n_segments."""


class _Segment:
    __slots__ = ("batch", "pos", "done")

    def __init__(self):
        self.batch: list[SequenceRecord] = []
        self.pos = 0
        self.done = False


_END = object()


class RecordDispatcher:
    """Fans a parsed record stream out to up to n_segments threads.

    A single producer thread prefetches records into bounded segments;
    each consumer thread drains its own segment before pulling the next
    one, so per-thread state never crosses threads and every record is
    delivered exactly once.  ParseError items are tallied rather than
    delivered.
    """

    def __init__(self, items: Iterable[ParseItem], n_segments: int,
                 segment_records: int = 1024):
        self.n_segments = n_segments
        self.segment_records = segment_records
        self.parse_errors: list[ParseError] = []
        self._items = iter(items)
        self._queue: queue.Queue = queue.Queue(maxsize=max(n_segments, 1))
        self._segments: dict[int, _Segment] = {}
        self._register_lock = threading.Lock()
        self._producer: threading.Thread | None = None
        self._producer_error: BaseException | None = None

    def _ensure_producer(self) -> None:
        if self._producer is None:
            with self._register_lock:
                if self._producer is None:
                    t = threading.Thread(target=self._produce, name="record-pump", daemon=True)
                    self._producer = t
                    t.start()

    def _produce(self) -> None:
        batch: list[SequenceRecord] = []
        try:
            for item in self._items:
                if isinstance(item, ParseError):
                    self.parse_errors.append(item)
                    continue
                batch.append(item)
                if len(batch) >= self.segment_records:
                    self._queue.put(batch)
                    batch = []
            if batch:
                self._queue.put(batch)
        except BaseException as exc:  # surfaced to consumers on their next pull
            self._producer_error = exc
        finally:
            self._queue.put(_END)

    def _segment_for(self, thread_id: int) -> _Segment:
        seg = self._segments.get(thread_id)
        if seg is None:
            with self._register_lock:
                seg = self._segments.get(thread_id)
                if seg is None:
                    if len(self._segments) >= self.n_segments:
                        raise DispatchContractError(
                            f"{len(self._segments) + 1} distinct threads for "
                            f"{self.n_segments} segments"
                        )
                    seg = _Segment()
                    self._segments[thread_id] = seg
        return seg

    def acquire_batch(self, thread_id: int | None = None) -> list[SequenceRecord] | None:
        """Next prefetched segment for this thread, or None when drained."""
        self._ensure_producer()
        tid = threading.get_ident() if thread_id is None else thread_id
        seg = self._segment_for(tid)
        if seg.done:
            return None
        got = self._queue.get()
        if got is _END:
            self._queue.put(_END)  # release the other consumers
            seg.done = True
            if self._producer_error is not None:
                raise self._producer_error
            return None
        return got

    def acquire_record(self, thread_id: int | None = None) -> SequenceRecord | None:
        """Next record for this thread, or None when the stream is drained."""
        self._ensure_producer()
        tid = threading.get_ident() if thread_id is None else thread_id
        seg = self._segment_for(tid)
        while True:
            if seg.pos < len(seg.batch):
                record = seg.batch[seg.pos]
                seg.pos += 1
                return record
            if seg.done:
                return None
            got = self._queue.get()
            if got is _END:
                self._queue.put(_END)
                seg.done = True
                if self._producer_error is not None:
                    raise self._producer_error
                return None
            seg.batch = got
            seg.pos = 0
