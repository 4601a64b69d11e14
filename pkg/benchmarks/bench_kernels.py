"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from imgdial import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    cost = rng.random((64, 64))
    matrix = rng.standard_normal((10_000, 128)).astype(np.float32)
    queries = rng.standard_normal((20, 128))
    rank = np.arange(10_000, dtype=np.int64)
    a = rng.integers(0, 50, size=200).tolist()
    b = rng.integers(0, 50, size=200).tolist()
    return {
        "hungarian n=64": lambda impl: impl.hungarian(cost),
        "topk_scan 10k x 128, 20 queries, k=10": lambda impl: impl.topk_scan(matrix, queries, 10, rank),
        "lcs_length 200 x 200": lambda impl: impl.lcs_length(a, b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled extension not built; timing the Python fallback only")
    rng = np.random.default_rng(0)
    names = sorted(impls)
    print(f"{'kernel':<42}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases(rng).items():
        t = {n: best_of(lambda: fn(impls[n]), args.repeat) for n in names}
        row = f"{label:<42}" + "".join(f"{t[n] * 1e3:>10.2f}ms" for n in names)
        if len(names) == 2:
            row += f"{t['python'] / t['compiled']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
