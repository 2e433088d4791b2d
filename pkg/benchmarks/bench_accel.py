#!/usr/bin/env python3
"""Timing comparison of the numba kernels against their numpy twins.

Runs the overlap-add / window-sum-square kernels on growing workloads
and one full Griffin-Lim reconstruction through each path.  The two
paths are bit-identical (asserted here); only speed differs.

Run as:  python benchmarks/bench_accel.py
The same comparison with the JIT disabled package-wide:
         MELDIFF_NO_NUMBA=1 meldiff griffinlim ...
"""

import time

import numpy as np

from meldiff import accel, audiodsp

if not accel.NUMBA_ENABLED:
    raise SystemExit("numba path disabled (MELDIFF_NO_NUMBA set or numba "
                     "missing); nothing to compare")

WIN, HOP = 640, 160


def timeit(fn, *args, repeats=5):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    print(f"{'frames':>8} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>8}")
    for n_frames in (100, 400, 1600, 6400):
        frames = rng.standard_normal((n_frames, WIN))
        length = (n_frames - 1) * HOP + WIN
        args = (frames, HOP, length)
        assert np.array_equal(accel.overlap_add(*args),
                              accel._overlap_add_numpy(*args))
        jit = timeit(accel.overlap_add, *args)
        ref = timeit(accel._overlap_add_numpy, *args)
        print(f"{n_frames:>8} {1e3 * jit:>12.3f} {1e3 * ref:>12.3f} "
              f"{ref / jit:>8.2f}x")


def bench_griffin_lim():
    rng = np.random.default_rng(1)
    fb = audiodsp.build_mel_filterbank()
    stats = audiodsp.NormalizationStats(np.log(1e-5), 2.0)
    mel = rng.uniform(-1.0, 0.2, (80, 200))

    def run(oa, wss):
        saved = accel.overlap_add, accel.window_sumsquare
        accel.overlap_add, accel.window_sumsquare = oa, wss
        try:
            return audiodsp.griffin_lim(mel, fb, stats, iterations=30, seed=0)
        finally:
            accel.overlap_add, accel.window_sumsquare = saved

    jit_out = run(accel.overlap_add, accel.window_sumsquare)
    t_jit = timeit(lambda: run(accel.overlap_add, accel.window_sumsquare),
                   repeats=3)
    ref_out = run(accel._overlap_add_numpy, accel._window_sumsquare_numpy)
    t_ref = timeit(lambda: run(accel._overlap_add_numpy,
                               accel._window_sumsquare_numpy), repeats=3)
    assert np.array_equal(jit_out.samples, ref_out.samples)
    print(f"\ngriffin_lim 80x200, 30 iterations: numba {t_jit:.3f}s, "
          f"numpy {t_ref:.3f}s, speedup {t_ref / t_jit:.2f}x")


if __name__ == "__main__":
    accel.overlap_add(np.zeros((2, WIN)), HOP, HOP + WIN)     # warm the JIT
    accel.window_sumsquare(np.zeros(WIN), 2, HOP, HOP + WIN)
    bench_kernels()
    bench_griffin_lim()
