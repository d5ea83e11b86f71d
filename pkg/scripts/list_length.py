"""Mean interaction-list length against N at fixed theta."""
import sys

import numpy as np

from bhflow.icgen import PlummerConfig, plummer_arrays
from bhflow.octree import interaction_lists, make_tree

theta = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
rows = []
for e in range(8, 17):
    mass, pos, _ = plummer_arrays(PlummerConfig(n=2**e, seed=1))
    off, _ = interaction_lists(make_tree(pos, mass), pos, theta)
    rows.append((2**e, float(np.diff(off).mean())))

logs = np.log([n for n, _ in rows])
lens = np.array([l for _, l in rows])
c = float(logs @ lens / (logs @ logs))
slope, icpt = np.polyfit(logs, lens, 1)
print(f"theta={theta}  c*lnN fit c={c:.1f}   affine fit {slope:.1f}*lnN {icpt:+.1f}")
for (n, l), x in zip(rows, logs):
    print(f"N={n:>6}  len={l:8.1f}  c*lnN {(l - c * x) / (c * x):+6.1%}  affine {(l - slope * x - icpt) / l:+6.1%}")
