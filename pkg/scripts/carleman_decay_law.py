"""Log-log slope of the Carleman ratio (t1+t2+t3)/rhs in tau for fixed bumps.

For a field vanishing to order p at the inner edge of its support, Laplace
asymptotics of the weight e^{2 tau phi} give t_i ~ tau^-(2p+1) and
rhs ~ tau^-(2p-3), so the ratio falls like tau^-2 whatever p is. This is
why the max/min spread of the ratio over tau = 1..16 is about 16^2.
"""
import numpy as np

from lamelab.carleman import CarlemanWeights, carleman_scan, polynomial_bump
from lamelab.fields import constant_coefficients, radial_profile_field, smooth_coefficients

taus = [1, 2, 4, 8, 16, 32]
w = CarlemanWeights(1.0, 0.5, 2.0)
for coeffs in (constant_coefficients(), smooth_coefficients()):
    for power in (3, 4, 5):
        u = radial_profile_field(polynomial_bump(0.5, 1.0, power))
        ratios = np.array([r[5] for r in carleman_scan(coeffs, w, u, taus)])
        tail = np.polyfit(np.log(taus[-3:]), np.log(ratios[-3:]), 1)[0]
        spread = ratios[:5].max() / ratios[:5].min()
        print(f"{coeffs.name:9s} p={power}: spread over tau<=16 {spread:7.1f}, tail slope {tail:+.3f}")
