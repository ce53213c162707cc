"""Benchmark harness: wall-time scaling of the attention variants.

Synthetic surface clouds with an exact token count feed each attention
operator; each (variant, size) cell reports the median and IQR over a
configurable number of trials after warmup runs. Timing uses a monotonic
clock. The CSV layout is ``variant,n,median_s,iqr_s,trials``; everything
except the two timing columns is deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .baselines import (
    GLOBAL_ATTENTION_GUARD,
    cubic_partition,
    cubic_window_attention,
    global_attention,
    knn_indices,
    knn_sliding_attention,
)
from .errors import ConfigError
from .octree import build_octree
from .partition import AttentionParams, make_plan, windowed_attention
from .synthetic import cloud_from_cells, surface_cells
from .tensor import Tensor

VARIANTS = ("octree", "cubic", "knn", "global")


@dataclass
class BenchSettings:
    channels: int = 96
    heads: int = 6
    point_number: int = 32
    dilation: int = 1
    k_neighbors: int = 32
    cubic_window: int = 6
    depth: int | None = None  # None: per-size depth keeping surfaces dense
    trials: int = 3
    warmup: int = 2
    seed: int = 0
    include_knn_search: bool = True

    def __post_init__(self):
        if self.trials < 1 or self.warmup < 0:
            raise ConfigError("trials must be >= 1 and warmup >= 0")


@dataclass
class BenchRow:
    variant: str
    n: int
    median_s: float
    iqr_s: float
    trials: int


def _make_runner(variant: str, n: int, cfg: BenchSettings):
    from .synthetic import surface_depth

    depth = cfg.depth if cfg.depth is not None else surface_depth(n)
    rng = np.random.default_rng(cfg.seed + n)
    keys = surface_cells(n, depth, cfg.seed + n)
    octree = build_octree(cloud_from_cells(keys, depth))
    assert octree.node_count(depth) == n
    params = AttentionParams.init(cfg.channels, cfg.heads, rng)
    x = Tensor(rng.normal(size=(n, cfg.channels)).astype(np.float32))

    if variant == "octree":
        def run():
            plan = make_plan(n, cfg.point_number, cfg.dilation)
            return windowed_attention(x, plan, params)
    elif variant == "cubic":
        def run():
            part = cubic_partition(octree, depth, cfg.cubic_window)
            return cubic_window_attention(x, part, params)
    elif variant == "knn":
        cached = None
        if not cfg.include_knn_search:
            cached = knn_indices(octree, depth, cfg.k_neighbors)

        def run():
            return knn_sliding_attention(x, octree, depth, cfg.k_neighbors,
                                         params, neighbors=cached)
    elif variant == "global":
        if n > GLOBAL_ATTENTION_GUARD:
            raise ConfigError(
                f"global variant guarded at N <= {GLOBAL_ATTENTION_GUARD}")

        def run():
            return global_attention(x, params)
    else:
        raise ConfigError(f"unknown variant {variant!r}; have {VARIANTS}")
    return run


def bench_attention(sizes: list[int], variant: str,
                    cfg: BenchSettings) -> list[BenchRow]:
    """Median/IQR wall time of one attention pass per (variant, size)."""
    rows = []
    for n in sizes:
        if n < 1:
            raise ConfigError("bench sizes must be >= 1")
        run = _make_runner(variant, n, cfg)
        for _ in range(cfg.warmup):
            run()
        times = []
        for _ in range(cfg.trials):
            t0 = time.perf_counter()
            run()
            times.append(time.perf_counter() - t0)
        q25, q50, q75 = np.percentile(times, [25, 50, 75])
        rows.append(BenchRow(variant, n, float(q50), float(q75 - q25), cfg.trials))
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "n", "median_s", "iqr_s", "trials"])
    for r in rows:
        writer.writerow([r.variant, r.n, f"{r.median_s:.6e}", f"{r.iqr_s:.6e}",
                         r.trials])
    return buf.getvalue()


def linear_fit_r2(ns: np.ndarray, times: np.ndarray) -> float:
    """R^2 of an affine fit time ~ a*n + b."""
    ns = np.asarray(ns, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    coeffs = np.polyfit(ns, times, deg=1)
    pred = np.polyval(coeffs, ns)
    ss_res = ((times - pred) ** 2).sum()
    ss_tot = ((times - times.mean()) ** 2).sum()
    return float(1.0 - ss_res / ss_tot) if ss_tot > 0 else 1.0
