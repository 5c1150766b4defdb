#!/usr/bin/env python3
"""False detection of the beamformer: saddle-point formula vs simulation.

For one reference direction, lists every sidelobe peak with its P_q, then
compares the union bound with a Monte Carlo estimate at a few SNRs.
"""
import numpy as np

from compressive_doa import ArrayGeometry
from compressive_doa import simulate as sim
from compressive_doa.cli import bundled_design
from compressive_doa.false_detect import pd_curve, union_bound_pd
from compressive_doa.performance import default_theta0_grid

geom = ArrayGeometry.uca(9, 0.65)
phi = bundled_design("opt_crb")

rep = union_bound_pd(phi, geom, theta0=1.0, snr=1.0)
print("sidelobes around theta0 = 1.0 rad at 0 dB")
for t, h, p in rep.per_sidelobe:
    print(f"  theta_q {t:6.3f}  height {h:5.3f}  P_q {p:.4f}")
print(f"  union bound {rep.union_bound:.4f}")

th = default_theta0_grid(90)
print(f"\n{'SNR':>4} {'bound':>8} {'simulated':>10}")
for snr_db in (-3, 0, 3, 6, 9):
    bound = pd_curve(phi, geom, th, 10 ** (snr_db / 10)).mean()
    p, se = sim.empirical_pd(phi, geom, sim.Scenario.single(th[0], snr_db), 5000, seed=snr_db + 10,
                             thetas0=th)
    print(f"{snr_db:4d} {bound:8.4f} {p:7.4f}+-{se:.4f}")
