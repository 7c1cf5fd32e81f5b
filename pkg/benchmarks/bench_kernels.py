"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Results go to stdout as a small table (median seconds per call).
"""
import argparse
import statistics
import time

import numpy as np

from mmbeam import _accel
from mmbeam.signalmodel import make_dft_codebook


def timed(fn, repeat):
    fn()  # warm-up (JIT compile for numba)
    runs = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t)
    return statistics.median(runs)


def cases(rng):
    H = rng.normal(size=(20_000, 32)) + 1j * rng.normal(size=(20_000, 32))
    F = make_dft_codebook(32, 32).vectors
    truths = rng.integers(0, 32, 200_000)
    ranked = rng.integers(0, 32, (200_000, 3))
    pts = rng.uniform(-25, 25, (500_000, 3))
    vox = ((-20.0, 0.0, -0.5), (40.0, 16.0, 4.0), (16, 16, 4))
    tx, ty, q = rng.normal(size=(1600, 2)), rng.integers(0, 32, 1600), rng.normal(size=(400, 2))
    return {
        "best_beams 20000x32": lambda u: _accel.best_beams(H, F, use_numba=u),
        "dba_per_rank 200000x3": lambda u: _accel.dba_per_rank(truths, ranked, 5.0, use_numba=u),
        "voxel_index 500000 pts": lambda u: _accel.voxel_index(pts, *vox, use_numba=u),
        "nn1_predict 1600/400": lambda u: _accel.nn1_predict(tx, ty, q, use_numba=u),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':26s} {'numpy [s]':>11s} {'numba [s]':>11s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        t_np = timed(lambda: fn(False), args.repeat)
        if _accel.HAVE_NUMBA:
            t_nb = timed(lambda: fn(True), args.repeat)
            print(f"{name:26s} {t_np:11.5f} {t_nb:11.5f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:26s} {t_np:11.5f} {'n/a':>11s} {'':>8s}")


if __name__ == "__main__":
    main()
