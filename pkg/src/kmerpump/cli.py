"""Command-line pipeline: count, normalize, filter-abund, abund-dist, info.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Malformed
records in the inputs never abort a run; they are tallied and reported
on standard error in the final summary.
"""
from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import click
import numpy as np

from . import filters, persist, pipeline
from .metrics import MetricsAccumulator, render_report
from .seqio import Format, PumpConfig, SequenceRecord, format_record, open_pump, parse_records
from .sketch import CountingFilter, FilterConfig

DEFAULT_TABLE_SIZE = 100_000_000
DEFAULT_CHUNK_SIZE = 4 * 1024 * 1024

_k_option = click.option("-k", "k", type=click.IntRange(1, 32), required=True,
                         help="k-mer size (<= 32).")
_tables_option = click.option("--tables", type=click.IntRange(1, 255), default=4,
                              show_default=True, help="Number of counter tables.")
_table_size_option = click.option("--table-size", type=click.IntRange(min=1000),
                                  default=DEFAULT_TABLE_SIZE, show_default=True,
                                  help="Bytes per table; sizes become the largest primes "
                                       "at or below this. Use as much memory as you can spare.")
_batch_option = click.option("--batch-size", type=click.IntRange(min=1), default=512,
                             show_default=True, help="Counter updates applied per batch.")
_chunk_option = click.option("--chunk-size", type=click.IntRange(min=1),
                             default=DEFAULT_CHUNK_SIZE, show_default=True,
                             help="Data pump read size in bytes.")
_direct_option = click.option("--direct-io", is_flag=True,
                              help="Bypass the OS page cache (block-aligned reads).")
_threads_option = click.option("--threads", type=click.IntRange(1, 256), default=1,
                               show_default=True, help="Worker threads.")
_metrics_option = click.option("--metrics", "with_metrics", is_flag=True,
                               help="Report timers and throughput on standard error.")
_metrics_format_option = click.option("--metrics-format", type=click.Choice(["text", "jsonl"]),
                                      default="text", show_default=True)


@click.group()
def cli():
    """Streaming k-mer counting and abundance-based read preprocessing."""


def _pump_config(chunk_size: int, direct_io: bool, threads: int) -> PumpConfig:
    if direct_io and chunk_size % 4096 != 0:
        raise click.UsageError("--chunk-size must be a multiple of 4096 with --direct-io")
    return PumpConfig(chunk_size=chunk_size, cache_bypass=direct_io, n_segments=threads)


@contextmanager
def _output_handle(path: str):
    if path == "-":
        yield sys.stdout.buffer
        sys.stdout.buffer.flush()
    else:
        with open(path, "wb") as fh:
            yield fh


def _finish(metrics: MetricsAccumulator, with_metrics: bool, fmt: str) -> None:
    if with_metrics:
        sys.stderr.write(render_report(metrics, fmt))


def _records_or_tally(items, error_tally: list):
    for item in items:
        if isinstance(item, SequenceRecord):
            yield item
        else:
            error_tally.append(item)


@cli.command()
@_k_option
@_tables_option
@_table_size_option
@_batch_option
@_chunk_option
@_direct_option
@_threads_option
@_metrics_option
@_metrics_format_option
@click.argument("input", type=str)
@click.argument("output", type=str)
def count(k, tables, table_size, batch_size, chunk_size, direct_io, threads,
          with_metrics, metrics_format, input, output):
    """Count k-mers of INPUT into a filter and save it to OUTPUT."""
    metrics = MetricsAccumulator(enabled=with_metrics)
    config = FilterConfig(k=k, target_table_size=table_size, n_tables=tables,
                          batch_size=batch_size)
    filt = CountingFilter(config)
    pump = _pump_config(chunk_size, direct_io, threads)
    metrics.start_timer("total")
    result = pipeline.count_file(filt, input, n_threads=threads, pump_config=pump,
                                 metrics=metrics)
    persist.save_filter(filt, output)
    if metrics.enabled:
        metrics.stop_timer("total")
    click.echo(
        f"counted {result['kmers']} k-mers from {result['reads']} reads "
        f"({len(result['parse_errors'])} parse errors); "
        f"false positive rate {filt.false_positive_rate():.4g}",
        err=True,
    )
    _finish(metrics, with_metrics, metrics_format)


@cli.command()
@_k_option
@_tables_option
@_table_size_option
@_batch_option
@_chunk_option
@_direct_option
@_threads_option
@click.option("--cutoff", type=click.IntRange(1, 255), default=20, show_default=True,
              help="Keep a read while its median k-mer abundance is below this.")
@click.option("--save-table", type=str, default=None,
              help="Also save the accumulated filter to this path.")
@_metrics_option
@_metrics_format_option
@click.argument("input", type=str)
@click.argument("output", type=str)
def normalize(k, tables, table_size, batch_size, chunk_size, direct_io, threads, cutoff,
              save_table, with_metrics, metrics_format, input, output):
    """Digitally normalize INPUT into OUTPUT (kept reads only).

    Order-sensitive and online, so this runs single-threaded no matter
    what --threads says.
    """
    metrics = MetricsAccumulator(enabled=with_metrics)
    config = FilterConfig(k=k, target_table_size=table_size, n_tables=tables,
                          batch_size=batch_size)
    filt = CountingFilter(config)
    pump = _pump_config(chunk_size, direct_io, 1)
    errors: list = []
    kept = discarded = 0
    metrics.start_timer("total")
    records = _records_or_tally(parse_records(open_pump(input, pump, metrics)), errors)
    with _output_handle(output) as out:
        for record, decision in filters.normalize_by_median(records, filt, cutoff):
            if record is not None:
                out.write(format_record(record))
                kept += 1
            else:
                discarded += 1
    if metrics.enabled:
        metrics.stop_timer("total")
        metrics.add_counter("reads_parsed", kept + discarded)
        metrics.add_counter("reads_kept", kept)
    if save_table:
        persist.save_filter(filt, save_table)
    click.echo(
        f"kept {kept} of {kept + discarded} reads ({len(errors)} parse errors)",
        err=True,
    )
    _finish(metrics, with_metrics, metrics_format)


def _batched(iterable, size):
    batch = []
    for item in iterable:
        batch.append(item)
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch


@cli.command("filter-abund")
@_k_option
@click.option("--cutoff", type=click.IntRange(1, 255), default=2, show_default=True,
              help="Trim a read at its first k-mer counted below this.")
@_chunk_option
@_direct_option
@_threads_option
@_metrics_option
@_metrics_format_option
@click.argument("table_file", type=str)
@click.argument("input", type=str)
@click.argument("output", type=str)
def filter_abund(k, cutoff, chunk_size, direct_io, threads, with_metrics, metrics_format,
                 table_file, input, output):
    """Trim low-abundance tails of INPUT against a pre-counted TABLE_FILE."""
    metrics = MetricsAccumulator(enabled=with_metrics)
    filt = _load_table(table_file, k)
    pump = _pump_config(chunk_size, direct_io, threads)
    errors: list = []
    tallies = {filters.Verdict.KEEP: 0, filters.Verdict.TRIMMED: 0, filters.Verdict.DISCARD: 0}
    metrics.start_timer("total")
    records = _records_or_tally(parse_records(open_pump(input, pump, metrics)), errors)

    def trim_batch(batch):
        return [filters.trim_record(r, filt, cutoff, filt.config.k) for r in batch]

    with _output_handle(output) as out:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                batches = pool.map(trim_batch, _batched(records, 1024))
                decided = (pair for batch in batches for pair in batch)
                _write_decisions(out, decided, tallies)
        else:
            _write_decisions(out, filters.filter_abund(records, filt, cutoff), tallies)
    if metrics.enabled:
        metrics.stop_timer("total")
        metrics.add_counter("reads_parsed", sum(tallies.values()))
        metrics.add_counter("reads_kept",
                            tallies[filters.Verdict.KEEP] + tallies[filters.Verdict.TRIMMED])
    click.echo(
        f"kept {tallies[filters.Verdict.KEEP]}, trimmed {tallies[filters.Verdict.TRIMMED]}, "
        f"dropped {tallies[filters.Verdict.DISCARD]} "
        f"({len(errors)} parse errors)",
        err=True,
    )
    _finish(metrics, with_metrics, metrics_format)


def _write_decisions(out, decided, tallies) -> None:
    for record, decision in decided:
        tallies[decision.verdict] += 1
        if record is not None:
            out.write(format_record(record))


@cli.command("abund-dist")
@_k_option
@_chunk_option
@_direct_option
@_threads_option
@_metrics_option
@_metrics_format_option
@click.argument("table_file", type=str)
@click.argument("input", type=str)
@click.argument("output", type=str)
def abund_dist(k, chunk_size, direct_io, threads, with_metrics, metrics_format,
               table_file, input, output):
    """Histogram of k-mer abundances of INPUT against TABLE_FILE."""
    metrics = MetricsAccumulator(enabled=with_metrics)
    filt = _load_table(table_file, k)
    pump = _pump_config(chunk_size, direct_io, threads)
    errors: list = []
    metrics.start_timer("total")
    records = _records_or_tally(parse_records(open_pump(input, pump, metrics)), errors)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = pool.map(lambda b: filters.abundance_distribution(b, filt),
                                _batched(records, 1024))
            histogram = sum(partials, np.zeros(256, dtype=np.int64))
    else:
        histogram = filters.abundance_distribution(records, filt)
    if metrics.enabled:
        metrics.stop_timer("total")
    with _output_handle(output) as out:
        for count_value, frequency in enumerate(histogram):
            out.write(f"{count_value} {int(frequency)}\n".encode())
    click.echo(f"histogram over {int(histogram.sum())} k-mer instances "
               f"({len(errors)} parse errors)", err=True)
    _finish(metrics, with_metrics, metrics_format)


@cli.command()
@click.argument("table_file", type=str)
def info(table_file):
    """Print a table file's header fields."""
    meta = persist.describe(table_file)
    click.echo(f"path:        {meta['path']}")
    click.echo(f"version:     {meta['version']}")
    click.echo(f"k:           {meta['k']}")
    click.echo(f"tables:      {meta['n_tables']}")
    click.echo(f"table sizes: {' '.join(str(s) for s in meta['table_sizes'])}")
    click.echo(f"counter bytes: {meta['table_bytes']}")
    click.echo(f"file bytes:  {meta['file_bytes']}")


def _load_table(path: str, k: int) -> CountingFilter:
    filt = persist.load_filter(path)
    if filt.config.k != k:
        raise click.UsageError(f"-k {k} does not match table file k={filt.config.k}")
    return filt


def run(argv: list[str] | None = None) -> int:
    """Programmatic entry point; returns the process exit code."""
    try:
        cli.main(args=argv, prog_name="kmerpump", standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 2
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        return 1
    except SystemExit as exc:  # --help and friends
        code = exc.code
        return int(code) if code is not None else 0
    except (OSError, ValueError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run())
