#!/usr/bin/env python3
"""Average SNR of a compressive array relative to a sparse array of equal channel count."""
import numpy as np

from compressive_doa.performance import NoiseModel, snr_ratio

N, M, eta = 9, 5, 1.0
print(f"N={N} M={M} eta={eta}: limit {eta**2 * N / M:.3f}")
for beta_db in (-20, -10, 0, 10, 20):
    beta = 10 ** (beta_db / 10)
    r = snr_ratio(N, M, eta, NoiseModel(1.0, beta))
    print(f"  receiver/antenna noise {beta_db:+3d} dB -> ratio {r:.3f} ({10 * np.log10(r):+.2f} dB)")
