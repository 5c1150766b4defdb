"""Array geometry, steering vectors and sampled azimuth manifolds.

All angles are in radians and all lengths in wavelengths.  Only the
azimuthal plane is modelled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

UCA = "uca"
ARBITRARY = "arbitrary"


@dataclass(frozen=True)
class ArrayGeometry:
    """Planar array of isotropic elements.

    Use :meth:`uca` or :meth:`from_positions` rather than the raw constructor.
    ``gains`` is an optional per-element complex pattern factor (defaults to 1).
    """

    kind: str
    positions: np.ndarray = field(repr=False)
    n_elements: int
    radius: Optional[float] = None
    gains: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def uca(cls, n_elements: int, radius: float, gains=None) -> "ArrayGeometry":
        if n_elements < 1:
            raise ValueError("n_elements must be >= 1")
        if not radius > 0:
            raise ValueError("radius must be > 0")
        ang = 2 * np.pi * np.arange(n_elements) / n_elements
        pos = radius * np.column_stack([np.cos(ang), np.sin(ang)])
        return cls(UCA, pos, n_elements, float(radius), _gains(gains, n_elements))

    @classmethod
    def from_positions(cls, positions, gains=None) -> "ArrayGeometry":
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError("positions must have shape (N, 2)")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        return cls(ARBITRARY, pos, pos.shape[0], None, _gains(gains, pos.shape[0]))

    @classmethod
    def ula(cls, n_elements: int, spacing: float = 0.5) -> "ArrayGeometry":
        """Uniform linear array along the x axis, centred at the origin."""
        x = (np.arange(n_elements) - (n_elements - 1) / 2) * spacing
        return cls.from_positions(np.column_stack([x, np.zeros(n_elements)]))

    @property
    def element_angles(self) -> np.ndarray:
        """Angular element positions 2*pi*(n-1)/N (UCA only)."""
        if self.kind != UCA:
            raise ValueError("element angles are defined for UCAs only")
        return 2 * np.pi * np.arange(self.n_elements) / self.n_elements

    def to_dict(self) -> dict:
        if self.kind == UCA:
            return {"kind": UCA, "n_elements": self.n_elements, "radius": self.radius}
        return {"kind": ARBITRARY, "positions": self.positions.tolist()}

    @classmethod
    def from_dict(cls, cfg: dict) -> "ArrayGeometry":
        kind = cfg.get("kind", UCA)
        extra = set(cfg) - {"kind", "n_elements", "radius", "positions"}
        if extra:
            raise ValueError(f"unknown geometry keys: {sorted(extra)}")
        if kind == UCA:
            return cls.uca(int(cfg["n_elements"]), float(cfg["radius"]))
        if kind == ARBITRARY:
            return cls.from_positions(cfg["positions"])
        raise ValueError(f"unknown geometry kind {kind!r}")


def _gains(gains, n):
    if gains is None:
        return None
    g = np.asarray(gains, dtype=complex).reshape(-1)
    if g.size != n:
        raise ValueError("gains must have one entry per element")
    return g


def _phase(geom: ArrayGeometry, theta: np.ndarray) -> np.ndarray:
    # (N, P) phase 2*pi*<p_n, u(theta)>
    u = np.stack([np.cos(theta), np.sin(theta)])
    return 2 * np.pi * geom.positions @ u


def steering_matrix(geom: ArrayGeometry, theta) -> np.ndarray:
    """Steering vectors for each angle in ``theta`` as columns, shape (N, P)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    a = np.exp(1j * _phase(geom, theta))
    if geom.gains is not None:
        a = geom.gains[:, None] * a
    return a


def steering_derivative_matrix(geom: ArrayGeometry, theta) -> np.ndarray:
    """Derivative of :func:`steering_matrix` with respect to theta."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    du = np.stack([-np.sin(theta), np.cos(theta)])
    dphase = 2 * np.pi * geom.positions @ du
    return 1j * dphase * steering_matrix(geom, theta)


def steering_vector(geom: ArrayGeometry, theta: float) -> np.ndarray:
    """Response a(theta) of the array to a unit plane wave, length N.

    For a UCA, ``a_n = exp(j 2 pi R cos(theta - 2 pi (n-1)/N))``.
    """
    return steering_matrix(geom, theta)[:, 0]


def steering_derivative(geom: ArrayGeometry, theta: float) -> np.ndarray:
    return steering_derivative_matrix(geom, theta)[:, 0]


@dataclass(frozen=True)
class AzimuthGrid:
    """Strictly increasing azimuth sampling points in (0, 2*pi]."""

    points: np.ndarray
    spacing: str = "uniform-angle"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        object.__setattr__(self, "points", pts)
        if pts.size < 1:
            raise ValueError("grid needs at least one point")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if pts[0] <= 0 or pts[-1] > 2 * np.pi + 1e-12:
            raise ValueError("grid points must lie in (0, 2*pi]")

    def __len__(self):
        return self.points.size

    @classmethod
    def uniform(cls, n_points: int = 360) -> "AzimuthGrid":
        return cls(2 * np.pi * np.arange(1, n_points + 1) / n_points)

    @classmethod
    def uniform_spatial_frequency(cls, n_points: int) -> "AzimuthGrid":
        """Grid uniform in cos(theta) (cell midpoints on (-1, 1)), angles in (0, pi).

        On this grid a half-wavelength ULA with ``n_points`` elements has
        ``A @ A^H = N I`` (DFT orthogonality).
        """
        u = -1 + (2 * np.arange(1, n_points + 1) - 1) / n_points
        theta = np.arccos(u)[::-1]
        return cls(theta, "uniform-spatial-frequency")

    @classmethod
    def sector(cls, start: float, stop: float, n_points: int) -> "AzimuthGrid":
        """Uniform grid on the arc [start, stop], wrapped and sorted."""
        pts = np.mod(np.linspace(start, stop, n_points), 2 * np.pi)
        pts[pts == 0] = 2 * np.pi
        return cls(np.sort(pts))


def manifold_matrix(geom: ArrayGeometry, grid: AzimuthGrid | Sequence[float]) -> np.ndarray:
    """Steering matrix A sampled on ``grid``, shape (N, P)."""
    pts = grid.points if isinstance(grid, AzimuthGrid) else grid
    return steering_matrix(geom, pts)


def orthogonality_deviation(A: np.ndarray) -> float:
    """Relative deviation of ``A @ A^H`` from the nearest multiple of I."""
    G = A @ A.conj().T
    c = np.trace(G).real / G.shape[0]
    if c == 0:
        return np.inf
    return float(np.linalg.norm(G - c * np.eye(G.shape[0])) / (c * np.sqrt(G.shape[0])))
