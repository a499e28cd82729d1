"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Numba timings exclude the first (compiling) call.  Both paths are checked for
identical output before timing.
"""

import argparse
import timeit

import numpy as np

from hardgap import _kernels as k
from hardgap.ca_core import named_rule


def cases(rng):
    rows = rng.integers(0, 2, size=(2000, 101), dtype=np.uint8)
    rule = named_rule("D")
    m, n = 400, 700
    mat = rng.integers(0, 2**63, size=(m, (n + 63) // 64), dtype=np.uint64)
    mat[:, -1] &= np.uint64((1 << (n % 64)) - 1)
    rhs = rng.integers(0, 2, size=m, dtype=np.uint8)
    return {
        "neighbourhood_index (2000x101, r=2)": (k.neighbourhood_index_numpy, k.neighbourhood_index_numba, (rows, 2)),
        "evolve (2000x101, rule D, 4 steps)": (k.evolve_numpy, k.evolve_numba, (rows, rule.table, 2, 4)),
        "gf2_eliminate (400x700)": (k.gf2_eliminate_numpy, k.gf2_eliminate_numba, (mat, rhs, n)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (f_np, f_nb, a) in cases(rng).items():
        if not same(f_np(*a), f_nb(*a)):
            raise SystemExit(f"{name}: paths disagree")
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:40s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
