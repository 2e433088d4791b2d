"""Hot inner-loop kernels, JIT-compiled with numba when available.

The package is numpy-vectorized throughout; the only true scalar inner
loops live in the inverse-STFT overlap-add used by Griffin-Lim (60+
analysis/synthesis round trips per reconstruction).  Those kernels are
compiled with ``@njit`` by default and fall back to plain numpy when
numba is missing or when the environment variable ``MELDIFF_NO_NUMBA``
is set to a non-empty value.  Both paths accumulate in the same order,
so their outputs are bit-identical; ``benchmarks/bench_accel.py``
compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = bool(os.environ.get("MELDIFF_NO_NUMBA", "").strip())

if not _DISABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _DISABLED = True

NUMBA_ENABLED = not _DISABLED


def _overlap_add(frames, hop, length):
    out = np.zeros(length, dtype=frames.dtype)
    n_frames, win = frames.shape
    for m in range(n_frames):
        start = m * hop
        for n in range(win):
            out[start + n] += frames[m, n]
    return out


def _window_sumsquare(window, n_frames, hop, length):
    out = np.zeros(length, dtype=window.dtype)
    win = window.shape[0]
    for m in range(n_frames):
        start = m * hop
        for n in range(win):
            out[start + n] += window[n] * window[n]
    return out


def _overlap_add_numpy(frames, hop, length):
    out = np.zeros(length, dtype=frames.dtype)
    win = frames.shape[1]
    for m in range(frames.shape[0]):
        start = m * hop
        out[start:start + win] += frames[m]
    return out


def _window_sumsquare_numpy(window, n_frames, hop, length):
    out = np.zeros(length, dtype=window.dtype)
    wsq = window * window
    win = window.shape[0]
    for m in range(n_frames):
        start = m * hop
        out[start:start + win] += wsq
    return out


if NUMBA_ENABLED:
    overlap_add = njit(cache=True)(_overlap_add)
    window_sumsquare = njit(cache=True)(_window_sumsquare)
else:
    overlap_add = _overlap_add_numpy
    window_sumsquare = _window_sumsquare_numpy
