"""Compiled inner loops for encoding and counter updates.

Both kernels are numba-jitted with ``nogil=True`` so worker threads
genuinely overlap: the byte-to-code scan and the table scatter release
the interpreter lock for their whole run.  All arithmetic is integer
and deterministic.
"""
from __future__ import annotations

import numpy as np
from numba import njit, uint64


@njit(nogil=True, cache=True)
def canonical_codes_into(buf, lut, k, out):
    """Scan normalized bytes, writing canonical k-mer codes into out.

    Bytes mapping to 255 in the lookup table split the scan into valid
    runs; a run restarts the rolling window.  Forward code shifts the
    new base in at the low end, reverse code shifts the complement in
    at the high end.  Returns the number of codes written; out must
    have capacity >= buf.size.
    """
    mask = uint64(0xFFFFFFFFFFFFFFFF) if k >= 32 else uint64((1 << (2 * k)) - 1)
    hi_shift = uint64(2 * (k - 1))
    two = uint64(2)
    one = uint64(1)
    forward = uint64(0)
    reverse = uint64(0)
    run = 0
    m = 0
    for i in range(buf.size):
        c = lut[buf[i]]
        if c == 255:
            run = 0
            forward = uint64(0)
            reverse = uint64(0)
            continue
        code = uint64(c)
        forward = ((forward << two) | code) & mask
        reverse = (reverse >> two) | ((code ^ one) << hi_shift)
        run += 1
        if run >= k:
            out[m] = forward if forward < reverse else reverse
            m += 1
    return m


@njit(nogil=True, cache=True)
def canonical_codes_positions_into(buf, lut, k, out, pos):
    """Like canonical_codes_into, but also records each k-mer's start
    position within buf (needed when invalid bytes split the scan and
    code index no longer equals base position)."""
    mask = uint64(0xFFFFFFFFFFFFFFFF) if k >= 32 else uint64((1 << (2 * k)) - 1)
    hi_shift = uint64(2 * (k - 1))
    two = uint64(2)
    one = uint64(1)
    forward = uint64(0)
    reverse = uint64(0)
    run = 0
    m = 0
    for i in range(buf.size):
        c = lut[buf[i]]
        if c == 255:
            run = 0
            forward = uint64(0)
            reverse = uint64(0)
            continue
        code = uint64(c)
        forward = ((forward << two) | code) & mask
        reverse = (reverse >> two) | ((code ^ one) << hi_shift)
        run += 1
        if run >= k:
            out[m] = forward if forward < reverse else reverse
            pos[m] = i - k + 1
            m += 1
    return m


@njit(nogil=True, cache=True)
def saturating_bump(table, codes, size):
    """Apply one saturating increment per code to table[code % size].

    Counters stick at 255 instead of wrapping.  Returns the number of
    slots that went 0 -> 1, for occupancy tracking.  Caller must hold
    the table's lock.
    """
    newly = 0
    for i in range(codes.size):
        slot = codes[i] % size
        c = table[slot]
        if c == 0:
            newly += 1
        if c != 255:
            table[slot] = c + 1
    return newly


def warm_up():
    """Force one compilation of each kernel (repeat calls are cheap)."""
    buf = np.frombuffer(b"ACGTACGT", dtype=np.uint8)
    lut = np.full(256, 255, dtype=np.uint8)
    for b, c in zip(b"ATCG", range(4)):
        lut[b] = c
    out = np.empty(8, dtype=np.uint64)
    pos = np.empty(8, dtype=np.int64)
    canonical_codes_into(buf, lut, 4, out)
    canonical_codes_positions_into(buf, lut, 4, out, pos)
    table = np.zeros(11, dtype=np.uint8)
    saturating_bump(table, out[:2], uint64(11))
