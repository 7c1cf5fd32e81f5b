"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``MMBEAM_DISABLE_NUMBA=1`` to force the numpy path (useful for
debugging and for environments without numba).
"""
from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("MMBEAM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLE:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kw):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------- beam search

@njit(cache=True)
def _best_beams_nb(H, F):
    n, n_ant = H.shape
    m_count = F.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = -1.0
        arg = 0
        for m in range(m_count):
            acc = 0j
            for a in range(n_ant):
                acc += H[i, a] * F[m, a]
            g = acc.real * acc.real + acc.imag * acc.imag
            if g > best:
                best = g
                arg = m
        out[i] = arg
    return out


def _best_beams_np(H, F):
    gains = np.abs(H @ F.T) ** 2
    return np.argmax(gains, axis=1).astype(np.int64)


def best_beams(H: np.ndarray, F: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    """Index of max ``|h^T f_m|^2`` per row of ``H`` (first index on ties).

    Defaults to the numpy path: the BLAS matmul beats the scalar loop here
    (see benchmarks/bench_kernels.py).
    """
    H = np.ascontiguousarray(H, dtype=np.complex128)
    F = np.ascontiguousarray(F, dtype=np.complex128)
    if use_numba is None:
        use_numba = False
    return _best_beams_nb(H, F) if use_numba else _best_beams_np(H, F)


# ---------------------------------------------------------------- DBA penalty

@njit(cache=True)
def _dba_per_rank_nb(truths, ranked, delta):
    n, k_count = ranked.shape
    acc = np.zeros(k_count)
    for i in range(n):
        best = 1.0
        for k in range(k_count):
            d = abs(ranked[i, k] - truths[i]) / delta
            if d > 1.0:
                d = 1.0
            if d < best:
                best = d
            acc[k] += best
    return 1.0 - acc / n


def _dba_per_rank_np(truths, ranked, delta):
    pen = np.minimum(np.abs(ranked - truths[:, None]) / delta, 1.0)
    best = np.minimum.accumulate(pen, axis=1)
    return 1.0 - best.mean(axis=0)


def dba_per_rank(truths: np.ndarray, ranked: np.ndarray, delta: float,
                 use_numba: bool | None = None) -> np.ndarray:
    """Per-rank scores ``Y_1..Y_K`` for integer truths ``(N,)`` and ranked ``(N, K)``."""
    truths = np.ascontiguousarray(truths, dtype=np.float64)
    ranked = np.ascontiguousarray(ranked, dtype=np.float64)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return _dba_per_rank_nb(truths, ranked, float(delta))
    return _dba_per_rank_np(truths, ranked, float(delta))


# ---------------------------------------------------------- voxel assignment

@njit(cache=True)
def _voxel_index_nb(points, origin, size, grid):
    n = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        flat = 0
        inside = True
        for a in range(3):
            rel = (points[i, a] - origin[a]) / size[a]
            if not (rel >= 0.0 and rel < 1.0):
                inside = False
                break
            c = int(np.floor(rel * grid[a]))
            if c >= grid[a]:
                c = grid[a] - 1
            flat = flat * grid[a] + c
        out[i] = flat if inside else -1
    return out


def _voxel_index_np(points, origin, size, grid):
    rel = (points[:, :3] - origin) / size
    inside = np.all((rel >= 0.0) & (rel < 1.0), axis=1)
    cells = np.minimum(np.floor(rel * grid).astype(np.int64), grid - 1)
    cells = np.where(inside[:, None], cells, 0)
    flat = (cells[:, 0] * grid[1] + cells[:, 1]) * grid[2] + cells[:, 2]
    return np.where(inside, flat, -1)


def voxel_index(points: np.ndarray, origin, size, grid, use_numba: bool | None = None) -> np.ndarray:
    """Flat C-order voxel index per point, ``-1`` for points outside the box."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.int64)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return _voxel_index_nb(points, origin, size, grid)
    return _voxel_index_np(points, origin, size, grid)


# ------------------------------------------------------------ nearest neighbour

@njit(cache=True)
def _nn1_nb(train_x, train_y, query):
    out = np.empty(query.shape[0], dtype=np.int64)
    for i in range(query.shape[0]):
        best = np.inf
        arg = 0
        for j in range(train_x.shape[0]):
            d = 0.0
            for a in range(train_x.shape[1]):
                t = train_x[j, a] - query[i, a]
                d += t * t
            if d < best:
                best = d
                arg = j
        out[i] = train_y[arg]
    return out


def _nn1_np(train_x, train_y, query):
    d = ((query[:, None, :] - train_x[None, :, :]) ** 2).sum(axis=2)
    return train_y[np.argmin(d, axis=1)]


def nn1_predict(train_x, train_y, query, use_numba: bool | None = None) -> np.ndarray:
    train_x = np.ascontiguousarray(np.atleast_2d(np.asarray(train_x, dtype=np.float64).T).T)
    query = np.ascontiguousarray(np.atleast_2d(np.asarray(query, dtype=np.float64).T).T)
    train_y = np.ascontiguousarray(train_y, dtype=np.int64)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return _nn1_nb(train_x, train_y, query)
    return _nn1_np(train_x, train_y, query)
