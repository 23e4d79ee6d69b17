"""Hoelder-slope experiment for the Cauchy problem (several minutes at h = 1/32).

    python scripts/stability_study.py [--h 32] [--out stability]
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from lamelab.cauchy import stability_experiment
from lamelab.fields import constant_coefficients
from lamelab.geometry import Grid3
from lamelab.solutions import KelvinSource, kelvin_field

ap = argparse.ArgumentParser()
ap.add_argument("--h", type=int, default=32, help="inverse grid spacing (odd node count needed for coarsening)")
ap.add_argument("--out", default="stability")
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(relativeCreated)8.0f ms  %(message)s")

u = kelvin_field(KelvinSource((0.8, 0.6, 1.6), tuple(np.ones(3) / np.sqrt(3))))
rep = stability_experiment(constant_coefficients(), u, 0.4, 1.0, 1.0, [1e-1, 1e-2, 1e-3],
                           Grid3.cube(-1, 1, 1 / args.h), seed=0)
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
rep.to_json(out / "stability.json")
rep.to_csv(out / "stability.csv")
for z, e, b in zip(rep.zeta0, rep.rel_errors, rep.betas):
    print(f"zeta0 {z:.3e}  beta {b:.0e}  relative error on omega {e:.4f}")
print(f"eps_emp = {rep.eps_emp:.3f}  ({rep.verdict})")
