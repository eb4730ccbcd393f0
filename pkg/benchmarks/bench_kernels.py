"""Compare the numba and numpy repulsion kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times one energy and one force evaluation per (c, d) for each backend, then a
full ``generate`` run under each backend (in a subprocess, since the backend is
fixed at import time by ``PEDCC_DISABLE_NUMBA``).
"""

import argparse
import os
import subprocess
import sys
import timeit

from pedcc import _accel, kernels
from pedcc.numeric import Rng, gaussian_matrix, l2_normalize_rows

SIZES = [(10, 8), (47, 64), (100, 16), (100, 512), (400, 64)]
GENERATE_CASES = [(9, 8), (47, 64), (100, 512)]


def best_of(fn, repeat):
    number = 5
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_table(repeat):
    print(f"{'c':>5} {'d':>5} {'numpy energy':>14} {'numba energy':>14} {'numpy forces':>14} {'numba forces':>14}")
    for c, d in SIZES:
        pts = l2_normalize_rows(gaussian_matrix(Rng(c + d), c, d))
        row = [best_of(lambda: kernels.energy_numpy(pts, 1.0), repeat), None,
               best_of(lambda: kernels.forces_numpy(pts, 1.0), repeat), None]
        if _accel.HAVE_NUMBA:
            kernels.energy_numba(pts, 1.0)  # compile outside the timing
            kernels.forces_numba(pts, 1.0)
            row[1] = best_of(lambda: kernels.energy_numba(pts, 1.0), repeat)
            row[3] = best_of(lambda: kernels.forces_numba(pts, 1.0), repeat)
        cells = ["-" if t is None else f"{t * 1e6:.1f} us" for t in row]
        print(f"{c:>5} {d:>5} " + " ".join(f"{cell:>14}" for cell in cells))


def generate_table():
    code = ("import time,warnings;from pedcc.centroids import generate;from pedcc import kernels;"
            "warnings.simplefilter('ignore');generate(3,3);t=time.perf_counter();"
            "cs=generate({c},{d},seed=0);"
            "print(kernels.BACKEND, f'{{time.perf_counter()-t:.3f}}', cs.iterations_run)")
    print(f"\n{'c':>5} {'d':>5} {'backend':>8} {'seconds':>9} {'iterations':>11}")
    for c, d in GENERATE_CASES:
        for disable in ("1", "0"):
            if disable == "0" and not _accel.HAVE_NUMBA:
                continue
            env = dict(os.environ, PEDCC_DISABLE_NUMBA=disable)
            out = subprocess.run([sys.executable, "-c", code.format(c=c, d=d)], env=env,
                                 capture_output=True, text=True, check=True).stdout.split()
            print(f"{c:>5} {d:>5} {out[0]:>8} {out[1]:>9} {out[2]:>11}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"numba available: {_accel.HAVE_NUMBA}\n")
    kernel_table(args.repeat)
    generate_table()


if __name__ == "__main__":
    main()
