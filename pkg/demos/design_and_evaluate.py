#!/usr/bin/env python3
"""Design a 9 -> 5 combining network and compare it with random ones.

Fits the correlation of the full 9-element UCA, then tightens the design for
worst-case CRB under a false-detection limit.  Prints worst-case CRB, worst
union-bound P_d and mean sidelobe level for the designs and a few random
kernels.  Takes a couple of minutes on one core.
"""
import numpy as np

from compressive_doa import ArrayGeometry, AzimuthGrid
from compressive_doa.combiner import random_kernels
from compressive_doa import crb_design as cd
from compressive_doa import scf_design as sd
from compressive_doa.performance import default_theta0_grid, mean_sidelobe_level

geom = ArrayGeometry.uca(9, 0.65)
M = 5
grid = AzimuthGrid.uniform(360)

target = sd.DesignTarget(grid, sd.reference_target(geom, grid, gain=9.0))
scf = sd.optimize_scf(geom, target, M, n_starts=5, seed=0)
print(f"SCF fit: cost {scf.cost:.1f} after {scf.starts_used} starts")

spec = cd.CrbDesignSpec(geom, M, rho_th=1.0, epsilon0=0.05, n_starts=0, init=scf.matrix)
crb = cd.optimize_crb(spec)
print(f"CRB design feasible: {crb.feasible}")

th = default_theta0_grid(90)
rows = [("scf", scf.matrix), ("crb", crb.matrix)]
rows += [(f"random{i}", k) for i, k in enumerate(random_kernels(M, 9, 3, seed=1))]
print(f"{'design':>10} {'worst CRB':>10} {'worst Pd':>9} {'mean SL':>8}")
for name, phi in rows:
    ev = cd.evaluate_design(phi, spec)
    sl = mean_sidelobe_level(phi, geom, th)
    print(f"{name:>10} {ev.worst_case_crb:10.4f} {ev.worst_case_pd:9.3f} {sl:8.3f}")

# rad^2 -> degrees for a feel of the numbers
print("sqrt(worst CRB) of the CRB design: %.2f deg" % np.degrees(np.sqrt(crb.cost)))
