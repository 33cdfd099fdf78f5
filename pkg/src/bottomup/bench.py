"""Scaling benchmark: linear-cost column attention vs quadratic reference.

Counts are exact analytic functions of the size — the column-attention
chain (logits + softmax + re-weighting) costs 2*H*W*C multiply-accumulates
and the dense all-pairs reference costs 2*(H*W)^2*C — and the instrumented
loop kernels reproduce them at runtime. Wall-clock medians come from a
warmed-up harness that batches fast kernels into inner loops long enough
to swamp timer and interpreter noise; op counts stay the exact arbiter,
the clock only corroborates the trend.
"""

import csv
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .column_attention import attention_mac_count

__all__ = [
    "BenchRow",
    "cca_mac_count",
    "quadratic_mac_count",
    "run_scaling",
    "fit_slope",
    "write_csv",
]

# one timed sample should take at least this long; fast kernels get looped
_TARGET_SAMPLE_NS = 25_000_000
_MAX_INNER = 10_000


@dataclass
class BenchRow:
    kernel: str
    backend: str
    height: int
    width: int
    channels: int
    pixels: int
    op_count: int
    median_ns: float


def cca_mac_count(height, width, channels):
    """Multiply-accumulates of the attention chain; linear in each dim."""
    return attention_mac_count(height, width, channels)


def quadratic_mac_count(height, width, channels):
    """Dense all-pairs attention: logits plus value application."""
    n = height * width
    return 2 * n * n * channels


def _make_runner(kernel, h, w, c, seed, backend):
    rng = np.random.default_rng([seed, h, w, c])
    if kernel == "cca":
        mod = kernels.get_backend(backend) if backend else kernels
        fb = rng.uniform(-1, 1, (1, h, w, c))
        fk = rng.uniform(-1, 1, (1, h, w, c))
        q = rng.uniform(-1, 1, (w, c))
        fused = mod.fused_column_attention
        return lambda: fused(fb, fk, q)
    if kernel == "quadratic":
        feats = rng.uniform(-1, 1, (h * w, c))
        return lambda: kernels.global_self_attention(feats)
    raise ValueError(f"unknown benchmark kernel: {kernel!r}")


def run_scaling(sizes, reps=3, seed=0, kernel="cca", backend=None):
    """Median wall time and exact op count per (H, W, C) size.

    One warm-up evaluation per size is discarded; each of the `reps`
    samples then times enough inner iterations to pass the minimum sample
    duration. Inputs are regenerated per size from `seed`, so the op-count
    column is byte-stable across runs even though timings move.
    """
    if not sizes:
        raise ValueError("need at least one size")
    if reps < 3:
        raise ValueError(f"reps must be at least 3, got {reps}")
    count_fn = cca_mac_count if kernel == "cca" else quadratic_mac_count
    rows = []
    for h, w, c in sizes:
        run = _make_runner(kernel, h, w, c, seed, backend)
        t0 = time.perf_counter_ns()
        run()  # warm-up, discarded
        once = max(time.perf_counter_ns() - t0, 1)
        inner = min(max(1, _TARGET_SAMPLE_NS // once), _MAX_INNER)
        samples = []
        for _ in range(reps):
            start = time.perf_counter_ns()
            for _ in range(inner):
                run()
            samples.append((time.perf_counter_ns() - start) / inner)
        rows.append(BenchRow(
            kernel=kernel,
            backend=backend or (kernels.BACKEND if kernel == "cca" else "numpy"),
            height=h, width=w, channels=c, pixels=h * w,
            op_count=count_fn(h, w, c),
            median_ns=float(np.median(samples)),
        ))
    return rows


def fit_slope(rows):
    """Least-squares slope of log(median_ns) against log(H*W)."""
    if len(rows) < 3:
        raise ValueError(f"need at least 3 points to fit a slope, got {len(rows)}")
    xs = np.array([math.log(r.pixels) for r in rows])
    ys = np.array([math.log(r.median_ns) for r in rows])
    xs_c = xs - xs.mean()
    return float(np.dot(xs_c, ys - ys.mean()) / np.dot(xs_c, xs_c))


def write_csv(rows, path):
    fields = ["kernel", "backend", "height", "width", "channels", "pixels",
              "op_count", "median_ns"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
