"""Compare the numba kernels with their numpy twins.

    python3 benchmarks/bench_kernels.py [--batch 128] [--repeat 50]
"""

import argparse
import time

import numpy as np

from simp import kernels, mdn


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_loss(batch, n_comp, repeat, rng):
    width = mdn.output_width(5, n_comp)
    raw = rng.normal(size=(batch, width))
    targets = rng.normal(size=(batch, 2))
    labels = mdn.one_hot(rng.integers(1, 6, size=batch), 5)
    args = (raw, targets, labels, 5, n_comp, 1e-3, 1e-3, 1.0, 1.0)
    kernels.mdn_terms_jit(*args)  # compile outside the timing
    a = kernels.mdn_terms_jit(*args)
    b = kernels.mdn_terms_numpy(*args)
    diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
    return (best_of(lambda: kernels.mdn_terms_jit(*args), repeat),
            best_of(lambda: kernels.mdn_terms_numpy(*args), repeat), diff)


def bench_neighbors(n_vehicles, repeat, rng):
    x = rng.uniform(0, 60, n_vehicles)
    y = rng.uniform(-400, 400, n_vehicles)
    lane = (x // 12).astype(np.int64) + 1
    kernels.select_neighbors_jit(x, y, lane, 0, 250.0)
    same = np.array_equal(kernels.select_neighbors_jit(x, y, lane, 0, 250.0),
                          kernels.select_neighbors_numpy(x, y, lane, 0, 250.0))
    return (best_of(lambda: kernels.select_neighbors_jit(x, y, lane, 0, 250.0), repeat),
            best_of(lambda: kernels.select_neighbors_numpy(x, y, lane, 0, 250.0), repeat), same)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--batch", type=int, default=128)
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba (us)':>12}{'numpy (us)':>12}{'speedup':>9}  check")
    for m in (1, 2):
        jit, ref, diff = bench_loss(args.batch, m, args.repeat, rng)
        print(f"{f'mdn loss+grad M={m} B={args.batch}':<28}{jit * 1e6:>12.1f}{ref * 1e6:>12.1f}"
              f"{ref / jit:>9.1f}  max|diff| {diff:.1e}")
    for n in (30, 300):
        jit, ref, same = bench_neighbors(n, args.repeat * 10, rng)
        print(f"{f'neighbour selection n={n}':<28}{jit * 1e6:>12.1f}{ref * 1e6:>12.1f}"
              f"{ref / jit:>9.1f}  {'identical' if same else 'MISMATCH'}")


if __name__ == "__main__":
    main()
