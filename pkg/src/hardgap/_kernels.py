"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used unless ``HARDGAP_NUMBA=0`` is set in the environment
(or numba fails to import).  Both paths are importable directly so tests and
``benchmarks/bench_kernels.py`` can compare them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("HARDGAP_NUMBA", "1") != "0"


def _jit(fn):
    if _HAVE_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# neighbourhood indices / CA stepping
# ---------------------------------------------------------------------------


def neighbourhood_index_numpy(rows: np.ndarray, radius: int) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64)
    span = 2 * radius + 1
    out = np.zeros(rows.shape, dtype=np.int64)
    for j in range(span):
        # leftmost cell (offset -radius) is the most significant bit
        out |= np.roll(rows, radius - j, axis=-1) << (span - 1 - j)
    return out


@_jit
def _neighbourhood_index_loops(rows, radius):
    n, w = rows.shape
    span = 2 * radius + 1
    out = np.zeros((n, w), dtype=np.int64)
    for s in range(n):
        for i in range(w):
            idx = 0
            for j in range(span):
                idx = (idx << 1) | rows[s, (i - radius + j) % w]
            out[s, i] = idx
    return out


def neighbourhood_index_numba(rows: np.ndarray, radius: int) -> np.ndarray:
    rows = np.asarray(rows)
    flat = np.ascontiguousarray(rows.reshape(-1, rows.shape[-1]), dtype=np.int64)
    return _neighbourhood_index_loops(flat, radius).reshape(rows.shape)


def evolve_numpy(rows: np.ndarray, table: np.ndarray, radius: int, steps: int) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.uint8)
    table = np.asarray(table, dtype=np.uint8)
    out = np.empty(rows.shape[:-1] + (steps + 1, rows.shape[-1]), dtype=np.uint8)
    out[..., 0, :] = rows
    for t in range(steps):
        out[..., t + 1, :] = table[neighbourhood_index_numpy(out[..., t, :], radius)]
    return out


@_jit
def _evolve_loops(rows, table, radius, steps):
    n, w = rows.shape
    span = 2 * radius + 1
    out = np.empty((n, steps + 1, w), dtype=np.uint8)
    for s in range(n):
        for i in range(w):
            out[s, 0, i] = rows[s, i]
        for t in range(steps):
            for i in range(w):
                idx = 0
                for j in range(span):
                    idx = (idx << 1) | out[s, t, (i - radius + j) % w]
                out[s, t + 1, i] = table[idx]
    return out


def evolve_numba(rows: np.ndarray, table: np.ndarray, radius: int, steps: int) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.uint8)
    flat = np.ascontiguousarray(rows.reshape(-1, rows.shape[-1]))
    out = _evolve_loops(flat, np.ascontiguousarray(table, dtype=np.uint8), radius, steps)
    return out.reshape(rows.shape[:-1] + (steps + 1, rows.shape[-1]))


# ---------------------------------------------------------------------------
# GF(2) elimination on bit-packed rows
# ---------------------------------------------------------------------------
# Matrix rows are uint64 words; bit c of the row lives in word c // 64 at
# position c % 64.  The right-hand side is carried separately.


def gf2_eliminate_numpy(mat: np.ndarray, rhs: np.ndarray, ncols: int):
    a = np.array(mat, dtype=np.uint64, copy=True)
    b = np.array(rhs, dtype=np.uint8, copy=True)
    m = a.shape[0]
    pivots = np.full(ncols, -1, dtype=np.int64)
    row = 0
    for col in range(ncols):
        if row >= m:
            break
        word, bit = divmod(col, 64)
        colbits = (a[row:, word] >> np.uint64(bit)) & np.uint64(1)
        hits = np.flatnonzero(colbits)
        if hits.size == 0:
            continue
        p = row + hits[0]
        if p != row:
            a[[row, p]] = a[[p, row]]
            b[[row, p]] = b[[p, row]]
        others = np.flatnonzero((a[:, word] >> np.uint64(bit)) & np.uint64(1))
        others = others[others != row]
        a[others] ^= a[row]
        b[others] ^= b[row]
        pivots[col] = row
        row += 1
    rank = row
    consistent = not bool(np.any(b[rank:]))
    solution = np.zeros(ncols, dtype=np.uint8)
    for col in range(ncols):
        if pivots[col] >= 0:
            solution[col] = b[pivots[col]]
    return rank, consistent, solution, pivots


@_jit
def _gf2_eliminate_loops(a, b, ncols):
    m = a.shape[0]
    nw = a.shape[1]
    pivots = np.full(ncols, -1, dtype=np.int64)
    row = 0
    one = np.uint64(1)
    for col in range(ncols):
        if row >= m:
            break
        word = col // 64
        bit = np.uint64(col % 64)
        p = -1
        for r in range(row, m):
            if (a[r, word] >> bit) & one:
                p = r
                break
        if p < 0:
            continue
        if p != row:
            for k in range(nw):
                tmp = a[row, k]
                a[row, k] = a[p, k]
                a[p, k] = tmp
            tb = b[row]
            b[row] = b[p]
            b[p] = tb
        for r in range(m):
            if r != row and (a[r, word] >> bit) & one:
                for k in range(nw):
                    a[r, k] ^= a[row, k]
                b[r] ^= b[row]
        pivots[col] = row
        row += 1
    consistent = True
    for r in range(row, m):
        if b[r] != 0:
            consistent = False
            break
    solution = np.zeros(ncols, dtype=np.uint8)
    for col in range(ncols):
        if pivots[col] >= 0:
            solution[col] = b[pivots[col]]
    return row, consistent, solution, pivots


def gf2_eliminate_numba(mat: np.ndarray, rhs: np.ndarray, ncols: int):
    a = np.array(mat, dtype=np.uint64, copy=True, order="C")
    if a.ndim != 2:
        a = a.reshape(a.shape[0], -1)
    b = np.array(rhs, dtype=np.uint8, copy=True)
    rank, consistent, solution, pivots = _gf2_eliminate_loops(a, b, ncols)
    return int(rank), bool(consistent), solution, pivots


if USE_NUMBA:
    neighbourhood_index = neighbourhood_index_numba
    evolve = evolve_numba
    gf2_eliminate = gf2_eliminate_numba
else:
    neighbourhood_index = neighbourhood_index_numpy
    evolve = evolve_numpy
    gf2_eliminate = gf2_eliminate_numpy
