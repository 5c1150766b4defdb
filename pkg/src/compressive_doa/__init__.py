"""Analog combining networks for compressive direction-of-arrival estimation.

Modules
-------
manifold      array geometry, steering vectors, azimuth grids
combiner      combining matrices and their text format
scf_design    correlation-fitting design (closed form and multi-start)
performance   CRB, correlation profiles, sidelobes, SNR formulas, sparse baseline
false_detect  analytic false-detection probability
crb_design    CRB-minimizing design under a false-detection limit
simulate      Monte Carlo engine
cli           command-line front end
"""

from .combiner import CombiningMatrix, random_kernel, structured_from_phases
from .manifold import ArrayGeometry, AzimuthGrid, steering_matrix, steering_vector
from .performance import NoiseModel

__version__ = "0.1.0"

__all__ = ["ArrayGeometry", "AzimuthGrid", "CombiningMatrix", "NoiseModel", "random_kernel",
           "steering_matrix", "steering_vector", "structured_from_phases"]
