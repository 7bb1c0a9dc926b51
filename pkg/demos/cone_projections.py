"""Projections onto products of cones and the Moreau decomposition.

For every cone C, v = Proj_C(v) + Proj_polar(v) with the two parts
orthogonal.  The script checks this on a product of a free block, an
orthant and a second-order cone, and prints the complementarity residual
of the split.
"""
import numpy as np

from sdcphm.cones import SOC, ConeSpec, Free, NonNeg, complementarity_residual

cone = ConeSpec([Free(2), NonNeg(3), SOC(3)])
polar = cone.polar()
rng = np.random.default_rng(0)

for k in range(3):
    v = rng.standard_normal(cone.total_dim)
    p, q = cone.project(v), polar.project(v)
    print(f"v      {np.round(v, 3)}")
    print(f"Proj_C {np.round(p, 3)}")
    print(f"Proj_C°{np.round(q, 3)}")
    print(f"|v - p - q| = {np.linalg.norm(v - p - q):.1e}   <p, q> = {p @ q:.1e}   "
          f"complementarity {complementarity_residual(cone, p, q):.1e}\n")

# a point outside the SOC lands on its boundary
v = np.array([3.0, 4.0, 1.0])
p = SOC(3).project(v)
print(f"SOC projection of {v}: {p}, ||u|| - t = {np.linalg.norm(p[:2]) - p[2]:.1e}")
