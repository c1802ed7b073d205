#!/usr/bin/env python3
"""Benchmark exhaustive vs coarse-to-fine correspondence search.

Prints similarity-evaluation counts (exact arithmetic) and wall-clock times
for a range of image sizes. The count ratio is the machine-independent
number; wall time depends on BLAS batching and is reported for context.
"""

import argparse
import time

import numpy as np

from partlift.matching import FeatureGrid, SimilarityCounter, brute_force_match, coarse_to_fine_match, pool_coarse


def smooth_field(rng, side, channels, low=6):
    """Bilinear upsampling of low-frequency noise: feature maps are
    spatially coherent, and coarse localization is meaningless without that."""
    base = rng.normal(size=(low, low, channels))
    i = np.linspace(0, low - 1, side)
    i0 = np.floor(i).astype(int).clip(0, low - 2)
    f = (i - i0)
    rows = base[i0] * (1 - f)[:, None, None] + base[i0 + 1] * f[:, None, None]
    data = rows[:, i0] * (1 - f)[None, :, None] + rows[:, i0 + 1] * f[None, :, None]
    data /= np.linalg.norm(data, axis=2, keepdims=True)
    return data


def bench(side, channels, ratio, window, queries, rng):
    data = smooth_field(rng, side, channels)
    fine = FeatureGrid(data.astype(np.float32), stride=1, normalized=True)
    coarse = pool_coarse(fine, ratio)

    qs = [data[rng.integers(side), rng.integers(side)] + 0.1 * rng.normal(size=channels) for _ in range(queries)]

    brute_counter, c2f_counter = SimilarityCounter(), SimilarityCounter()
    t0 = time.perf_counter()
    brute_results = [brute_force_match(q, fine, brute_counter) for q in qs]
    t_brute = time.perf_counter() - t0
    t0 = time.perf_counter()
    c2f_results = [coarse_to_fine_match(q, coarse, fine, window, c2f_counter) for q in qs]
    t_c2f = time.perf_counter() - t0
    agree = sum(a[0] == b[0] for a, b in zip(c2f_results, brute_results))
    return {
        "side": side,
        "brute_evals": brute_counter.total,
        "c2f_evals": c2f_counter.total,
        "count_ratio": brute_counter.total / c2f_counter.total,
        "brute_s": t_brute,
        "c2f_s": t_c2f,
        "wall_ratio": t_brute / t_c2f if t_c2f > 0 else float("nan"),
        "agreement": agree / queries,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sides", default="128,256,512,800")
    ap.add_argument("--channels", type=int, default=8)
    ap.add_argument("--ratio", type=int, default=8)
    ap.add_argument("--window", type=int, default=3)
    ap.add_argument("--queries", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'side':>5} {'brute evals':>12} {'c2f evals':>10} {'count x':>8} {'brute s':>8} {'c2f s':>7} {'wall x':>7} {'agree':>6}")
    for side in (int(s) for s in args.sides.split(",")):
        r = bench(side, args.channels, args.ratio, args.window, args.queries, rng)
        print(
            f"{r['side']:>5} {r['brute_evals']:>12} {r['c2f_evals']:>10} {r['count_ratio']:>8.1f} "
            f"{r['brute_s']:>8.3f} {r['c2f_s']:>7.3f} {r['wall_ratio']:>7.1f} {r['agreement']:>6.2f}"
        )


if __name__ == "__main__":
    main()
