"""Where does the decay bound (C/R1^4) exp(-e^-2 R1^-(eps - 1/ln a)) turn over?

Prints, for a range of inner radii theta (R_out = 1, s = 1, eps = 0.5), the
exponent eps - 1/ln a and the radius R1 below which the bound decreases.
"""
from lamelab.three_spheres import decay_limit_check, inv_ln_a_for

eps = 0.5
print(f"{'theta':>8} {'1/ln a':>8} {'exponent':>9} {'verdict':>14} {'turnover R1':>12}")
for theta in (0.001, 0.005, 0.01, 0.02, 0.03, 0.04, 0.05):
    k = inv_ln_a_for(1.0, 1.0, theta)
    chk = decay_limit_check(eps, k, 1.0, [1e-1, 1e-2, 1e-3, 1e-4])
    print(f"{theta:8.3f} {k:8.4f} {chk.exponent:9.4f} {chk.verdict:>14} {chk.turnover_R1:12.3e}")
