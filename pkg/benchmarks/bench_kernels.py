"""Compare the numba and numpy paths of the hot kernels.

Run: ``python benchmarks/bench_kernels.py [N]``. Numba compile time is paid
once (cached on disk) and excluded by a warm-up call.
"""
from __future__ import annotations

import sys
import timeit

import numpy as np

from thinshell import _kernels


def bench(N: int = 256, repeat: int = 5) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(0)
    f = rng.normal(size=(N, N, 3))
    A = np.eye(3) + 0.1 * rng.normal(size=(N * N * 8, 3, 3))
    b = rng.normal(size=(N * N * 8, 3))
    cases = {
        "ds_fd6 poles": lambda nb: _kernels.ds_fd6(f, 0.01, 1, 1.0, use_numba=nb),
        "ds_fd6 periodic": lambda nb: _kernels.ds_fd6(f, 0.01, 0, 1.0, use_numba=nb),
        "solve3": lambda nb: _kernels.solve3(A, b, use_numba=nb),
        "det3": lambda nb: _kernels.det3(A, use_numba=nb),
    }
    rows = []
    for name, fn in cases.items():
        times = {}
        for nb in (False, True):
            if nb and not _kernels.HAVE_NUMBA:
                times[nb] = float("nan")
                continue
            fn(nb)  # warm-up / compile
            times[nb] = min(timeit.repeat(lambda: fn(nb), number=3, repeat=repeat)) / 3
        rows.append((name, times[False], times[True]))
    return rows


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    N = int(argv[0]) if argv else 256
    print(f"grid {N}x{N}; backend default: {_kernels.backend()}")
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}")
    for name, tn, tb in bench(N):
        print(f"{name:<18}{1e3 * tn:>12.2f}{1e3 * tb:>12.2f}{tn / tb:>9.1f}")


if __name__ == "__main__":
    main()
