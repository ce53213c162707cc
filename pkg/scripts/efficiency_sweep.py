#!/usr/bin/env python3
"""Attention scaling sweep: octree window attention vs the baselines.

Times one attention pass per variant over a range of token counts on
seeded synthetic surface clouds and writes a CSV. The octree variant is
expected to scale linearly; the k-NN sliding baseline is the slow
reference point.

Usage:
    python3 scripts/efficiency_sweep.py --out bench.csv
    python3 scripts/efficiency_sweep.py --sizes 10000 20000 --variants octree knn
"""

import argparse
import sys

import numpy as np

from octformer.bench import BenchSettings, bench_attention, linear_fit_r2, rows_to_csv


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[10_000, 20_000, 50_000, 100_000, 200_000])
    parser.add_argument("--variants", nargs="+", default=["octree", "knn"],
                        choices=["octree", "cubic", "knn", "global"])
    parser.add_argument("--knn-sizes", type=int, nargs="+", default=None,
                        help="override sizes for the knn variant (it is slow)")
    parser.add_argument("--trials", type=int, default=3)
    parser.add_argument("--warmup", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="CSV path (default stdout)")
    args = parser.parse_args()

    rows = []
    for variant in args.variants:
        sizes = args.sizes
        trials, warmup = args.trials, args.warmup
        if variant == "knn":
            sizes = args.knn_sizes or [n for n in args.sizes if n <= 100_000]
            trials, warmup = min(trials, 1), min(warmup, 1)
        if variant == "global":
            sizes = [n for n in args.sizes if n <= 4096] or [1024, 2048, 4096]
        cfg = BenchSettings(trials=trials, warmup=warmup, seed=args.seed)
        rows.extend(bench_attention(sizes, variant, cfg))
        for r in rows[-len(sizes):]:
            print(f"  {r.variant:7s} n={r.n:>7d} median {r.median_s:.4f}s "
                  f"iqr {r.iqr_s:.5f}s", file=sys.stderr)

    csv_text = rows_to_csv(rows)
    if args.out:
        with open(args.out, "w") as f:
            f.write(csv_text)
    else:
        sys.stdout.write(csv_text)

    oct_rows = [r for r in rows if r.variant == "octree"]
    if len(oct_rows) >= 3:
        ns = np.array([r.n for r in oct_rows])
        ts = np.array([r.median_s for r in oct_rows])
        print(f"octree linear fit R^2 = {linear_fit_r2(ns, ts):.4f}",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
