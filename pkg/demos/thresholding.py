"""Hard and soft thresholding as the smoothing parameter shrinks.

Prints the l0 and l1 prox points and Moreau envelope values of a fixed
vector for a few rho values, and checks the sandwich 0 <= e_rho <= P.
"""
import numpy as np

from sdcphm.prox import l0_penalty, l1_penalty, prox_point

w = np.array([0.8, 0.05, -0.3, 0.004, -1.2])
penalties = {"l0(0.01)": l0_penalty(0.01), "l1(0.1)": l1_penalty(0.1)}

for name, P in penalties.items():
    print(f"\n{name}   w = {w}")
    print(f"{'rho':>8} {'prox point':>44} {'envelope':>10} {'P(w)':>8}")
    for rho in (1.0, 0.1, 0.01, 1e-3):
        res = prox_point(P, rho, w)
        assert 0.0 <= res.envelope_value <= P.value(w) + 1e-12
        print(f"{rho:8.0e} {np.array2string(res.point, precision=3, suppress_small=True):>44} "
              f"{res.envelope_value:10.4f} {P.value(w):8.4f}")

# the l0 keep threshold is sqrt(2 gamma rho): components below it are zeroed
rho = 0.1
print(f"\nl0 keep threshold at rho={rho}: {np.sqrt(2 * 0.01 * rho):.4f}")
