"""Spawn and spawn+dispatch cost of no-op tasks."""
import sys

from bhflow.engine import measure_spawn_overhead

n = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
for w in (1, 2, 4):
    m = measure_spawn_overhead(n, workers=w)
    print(
        f"workers={w} spawn median {m['spawn_median_ns'] / 1e3:.2f}us "
        f"p95 {m['spawn_p95_ns'] / 1e3:.2f}us  spawn+dispatch {m['spawn_dispatch_mean_ns'] / 1e3:.2f}us"
    )
