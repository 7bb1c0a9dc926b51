"""The property suites behind ``sdcphm verify``, then the corrupted-data check.

A covariance with a negative eigenvalue breaks monotonicity of the
scenario maps; the sampled certificate catches it.
"""
from sdcphm.verify import run_all

for corrupt in (False, True):
    print("corrupted Q2" if corrupt else "clean data")
    for r in run_all(corrupt_q2=corrupt):
        print(f"  {'PASS' if r.ok else 'FAIL'} {r.name:18s} {r.passed}/{r.total}")
