"""Solve Models A-D on one synthetic market and compare the solutions.

A and B carry the l0 term and go through the SDC loop; C and D are convex
and are solved by progressive hedging directly.  A and C also have the
ball ||x - y_i|| <= tau coupling the two stages.

    python demos/compare_variants.py [n] [K] [seed]
"""
import sys

import numpy as np

from sdcphm.harness import solve_one, support_tolerance
from sdcphm.markowitz import synthesize_market
from sdcphm.sdc import SDCConfig

n, K, seed = (int(a) for a in (sys.argv[1:] + ["20", "100", "0"][len(sys.argv) - 1:])[:3])
data = synthesize_market(n, K, seed)
sdc = SDCConfig()
print(f"n={n} K={K} seed={seed}; support cut {support_tolerance(data, sdc):.2e}")
print(f"{'model':>5} {'status':>12} {'nnz':>4} {'soc':>6} {'KKT_rel':>9} {'FeasErr':>9} {'PHM':>5} {'cpu s':>6}")
xs = {}
for label in "ABCD":
    rep, _ = solve_one(data, label, sdc, seed)
    xs[label] = np.array(rep["x"])
    print(f"{label:>5} {rep['status']:>12} {rep['nnz']:4d} {rep['soc']:6.3f} {rep['kkt_rel']:9.2e} "
          f"{rep['feas_error']:9.1e} {rep['phm_iterations']:5d} {rep['cpu_seconds']:6.1f}")

print("\nlargest first-stage weights")
for label, x in xs.items():
    top = np.argsort(x)[::-1][:5]
    print(f"{label}: " + "  ".join(f"{j}:{x[j]:.3f}" for j in top))
