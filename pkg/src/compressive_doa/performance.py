"""Analytic performance measures of a compressive array.

Covers the deterministic single-snapshot CRB, the normalized correlation
profile with its mainlobe and sidelobe peaks, the average SNR comparison
against a sparse array, and a simple optimized sparse-array baseline.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .combiner import as_array
from .manifold import ArrayGeometry, AzimuthGrid, steering_derivative_matrix, steering_matrix

log = logging.getLogger(__name__)

NULL_TO_NULL = "null-to-null"
THREE_DB = "3dB"


@dataclass(frozen=True)
class NoiseModel:
    """White noise before (``sigma1_sq``) and after (``sigma2_sq``) the combiner."""

    sigma1_sq: float = 1.0
    sigma2_sq: float = 0.0

    def __post_init__(self):
        if self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise ValueError("noise variances must be nonnegative")
        if self.sigma1_sq == 0 and self.sigma2_sq == 0:
            raise ValueError("sigma1_sq and sigma2_sq cannot both be zero")

    @property
    def total(self) -> float:
        return self.sigma1_sq + self.sigma2_sq

    @property
    def beta(self) -> float:
        if self.sigma1_sq == 0:
            return np.inf
        return self.sigma2_sq / self.sigma1_sq

    def covariance(self, phi) -> np.ndarray:
        """``sigma1^2 Phi Phi^H + sigma2^2 I``."""
        W = as_array(phi)
        return self.sigma1_sq * (W @ W.conj().T) + self.sigma2_sq * np.eye(W.shape[0])


# -- correlation profile -------------------------------------------------------

@dataclass
class CorrelationProfile:
    reference_doa: float
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    mainlobe: tuple
    peaks: list

    @property
    def mean_sidelobe(self) -> float:
        return float(np.mean([h for _, h in self.peaks])) if self.peaks else 0.0

    @property
    def max_sidelobe(self) -> float:
        return float(max(h for _, h in self.peaks)) if self.peaks else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "b"])
            for t, b in zip(self.grid, self.values):
                w.writerow([repr(float(t)), repr(float(b))])
            w.writerow([])
            w.writerow(["peak_theta", "peak_height"])
            for t, h in self.peaks:
                w.writerow([repr(float(t)), repr(float(h))])


def _grid_points(grid) -> np.ndarray:
    return grid.points if isinstance(grid, AzimuthGrid) else np.asarray(grid, float)


def _is_circular(pts: np.ndarray) -> bool:
    if pts.size < 3:
        return False
    d = np.diff(pts)
    gap = pts[0] + 2 * np.pi - pts[-1]
    return bool(np.allclose(d, d[0], rtol=1e-6) and abs(gap - d[0]) < 1e-6 * d[0] + 1e-12)


def normalized_correlation(phi, geom: ArrayGeometry, theta0, grid) -> np.ndarray:
    """``b(theta, theta0) = |a~^H a~_0| / (||a~|| ||a~_0||)``, shape (P, K)."""
    W = as_array(phi)
    pts = _grid_points(grid)
    At = W @ steering_matrix(geom, pts)
    A0 = W @ steering_matrix(geom, np.atleast_1d(theta0))
    n = np.linalg.norm(At, axis=0)
    n0 = np.linalg.norm(A0, axis=0)
    scale = max(n.max(), n0.max(), 1e-300)
    if np.any(n < 1e-12 * scale):
        bad = pts[np.argmin(n)]
        raise ValueError(f"blind spot: effective steering vector vanishes at theta={bad:.6g}")
    if np.any(n0 < 1e-12 * scale):
        raise ValueError("blind spot: effective steering vector vanishes at the reference DOA")
    b = np.abs(At.conj().T @ A0) / (n[:, None] * n0[None, :])
    return np.clip(b, 0.0, 1.0)


def _neighbors(v: np.ndarray, circular: bool):
    if circular:
        return np.roll(v, 1, axis=0), np.roll(v, -1, axis=0)
    lo = np.concatenate([v[:1] + np.inf, v[:-1]])
    hi = np.concatenate([v[1:], v[-1:] + np.inf])
    return lo, hi


def _mainlobe_bounds(col: np.ndarray, pts: np.ndarray, theta0: float, circular: bool,
                     mainlobe_def: str):
    """Grid indices (left, right) bounding the mainlobe around theta0 (exclusive).

    ``None`` for both means the walk went all the way round: the whole grid is
    mainlobe.
    """
    if mainlobe_def not in (NULL_TO_NULL, THREE_DB):
        raise ValueError(f"unknown mainlobe definition {mainlobe_def!r}")
    P = col.size
    t0 = np.mod(theta0, 2 * np.pi)
    t0 = 2 * np.pi if t0 == 0 else t0
    right = int(np.searchsorted(pts, t0, side="left"))
    left = right if right < P and pts[right] == t0 else right - 1
    lim = 1 / np.sqrt(2) if mainlobe_def == THREE_DB else -np.inf

    def walk(i, step):
        if not circular and not 0 <= i < P:
            return i
        i %= P
        for _ in range(P):
            if col[i] < lim:
                return i
            j = i + step
            if circular:
                j %= P
            elif not 0 <= j < P:
                return j
            if col[j] > col[i]:
                return i
            i = j
        return None

    lft, rgt = walk(left, -1), walk(right, 1)
    if lft is None or rgt is None:
        return None, None
    return lft, rgt


def _inside(idx: np.ndarray, left, right, P: int, circular: bool) -> np.ndarray:
    """Mask of indices strictly between left and right going counter-clockwise."""
    if left is None or right is None:
        return np.ones(idx.shape, bool)
    if not circular:
        return (idx > left) & (idx < right)
    span = (right - left) % P
    if span == 0:
        return np.ones(idx.shape, bool)
    return ((idx - left) % P > 0) & ((idx - left) % P < span)


def _refine(pts, col, i, circular):
    P = col.size
    if circular:
        im, ip = (i - 1) % P, (i + 1) % P
        h = (pts[1] - pts[0]) if P > 1 else 0.0
    else:
        if i == 0 or i == P - 1:
            return pts[i], col[i]
        im, ip = i - 1, i + 1
        h = 0.5 * (pts[ip] - pts[im])
    ym, y0, yp = col[im], col[i], col[ip]
    den = ym - 2 * y0 + yp
    if den >= 0:
        return pts[i], y0
    delta = 0.5 * (ym - yp) / den
    delta = float(np.clip(delta, -0.5, 0.5))
    return pts[i] + delta * h, y0 - 0.25 * (ym - yp) * delta


def profile_from_values(values: np.ndarray, grid, theta0: float,
                        mainlobe_def: str = NULL_TO_NULL, mainlobe_values=None):
    """Mainlobe interval and refined sidelobe peaks of a sampled profile.

    ``mainlobe_values`` (defaults to ``values``) delimits the mainlobe; peaks
    are strict local maxima of ``values`` outside it, refined by a 3-point
    parabola.  Returns ``(mainlobe_angles, peaks)``.
    """
    pts = _grid_points(grid)
    col = np.asarray(values, float)
    ml = col if mainlobe_values is None else np.asarray(mainlobe_values, float)
    circ = _is_circular(pts)
    P = col.size
    left, right = _mainlobe_bounds(ml, pts, theta0, circ, mainlobe_def)
    idx = np.arange(P)
    lo, hi = _neighbors(col, circ)
    is_peak = (col > lo) & (col > hi)
    is_peak &= ~_inside(idx, left, right, P, circ)
    peaks = []
    for i in np.flatnonzero(is_peak):
        t, h = _refine(pts, col, int(i), circ)
        peaks.append((float(np.mod(t, 2 * np.pi)), float(h)))
    if left is None:
        interval = (0.0, 2 * np.pi)
    elif circ:
        interval = (float(pts[left % P]), float(pts[right % P]))
    else:
        interval = (float(pts[max(left, 0)]), float(pts[min(right, P - 1)]))
    peaks.sort(key=lambda p: -p[1])
    return interval, peaks


def correlation_profile(phi, geom: ArrayGeometry, theta0: float, grid=None,
                        mainlobe_def: str = NULL_TO_NULL) -> CorrelationProfile:
    """Normalized SCF around ``theta0`` with mainlobe interval and sidelobe peaks.

    Sidelobe peaks are sorted by decreasing height; heights are clipped to [0, 1].
    """
    grid = AzimuthGrid.uniform(360) if grid is None else grid
    pts = _grid_points(grid)
    col = normalized_correlation(phi, geom, theta0, pts)[:, 0]
    interval, peaks = profile_from_values(col, pts, theta0, mainlobe_def)
    peaks = [(t, min(max(h, 0.0), 1.0)) for t, h in peaks]
    return CorrelationProfile(float(theta0), pts, col, interval, peaks)


def sidelobe_peaks(phi, geom: ArrayGeometry, thetas0, grid=None,
                   mainlobe_def: str = NULL_TO_NULL):
    """Sidelobe peak lists for several reference DOAs (one list per DOA)."""
    grid = AzimuthGrid.uniform(360) if grid is None else grid
    pts = _grid_points(grid)
    thetas0 = np.atleast_1d(thetas0)
    b = normalized_correlation(phi, geom, thetas0, pts)
    out = []
    for k, t0 in enumerate(thetas0):
        _, peaks = profile_from_values(b[:, k], pts, t0, mainlobe_def)
        out.append([(t, min(max(h, 0.0), 1.0)) for t, h in peaks])
    return out


def mean_sidelobe_level(phi, geom: ArrayGeometry, thetas0=None, grid=None,
                        mainlobe_def: str = NULL_TO_NULL) -> float:
    """Mean sidelobe peak height, averaged over reference DOAs (0 where none)."""
    thetas0 = default_theta0_grid() if thetas0 is None else thetas0
    per = sidelobe_peaks(phi, geom, thetas0, grid, mainlobe_def)
    return float(np.mean([np.mean([h for _, h in p]) if p else 0.0 for p in per]))


def default_theta0_grid(n: int = 90, start: float = 0.0, stop: float = 2 * np.pi) -> np.ndarray:
    """``n`` reference DOAs uniform over ``(start, stop]``."""
    return start + (stop - start) * np.arange(1, n + 1) / n


# -- CRB -----------------------------------------------------------------------

def crb_matrix(phi, geom: ArrayGeometry, doas: Sequence[float], R_s,
               noise: Optional[NoiseModel] = None) -> np.ndarray:
    """Deterministic CRB matrix ``(2 Re(F * R_s^T))^{-1}`` for K sources.

    ``F = D~^H Z D~`` with ``Z = R^{-1} - R^{-1} A~ (A~^H R^{-1} A~)^{-1} A~^H R^{-1}``
    and ``R = sigma1^2 Phi Phi^H + sigma2^2 I``.  For ``sigma2 = 0`` this is the
    ``sigma1^2 (2 Re(F * R_s^T))^{-1}`` form with ``Q = (Phi Phi^H)^{-1}``.
    """
    noise = NoiseModel() if noise is None else noise
    W = as_array(phi)
    doas = np.atleast_1d(np.asarray(doas, float))
    K = doas.size
    R_s = np.atleast_2d(np.asarray(R_s, complex))
    if R_s.shape != (K, K):
        raise ValueError(f"R_s must be {K}x{K}")
    At = W @ steering_matrix(geom, doas)
    Dt = W @ steering_derivative_matrix(geom, doas)
    R = noise.covariance(W)
    try:
        Ri_A = np.linalg.solve(R, At)
        Ri_D = np.linalg.solve(R, Dt)
        G = At.conj().T @ Ri_A
        if np.linalg.cond(G) > 1e12:
            raise np.linalg.LinAlgError
        F = Dt.conj().T @ Ri_D - (Dt.conj().T @ Ri_A) @ np.linalg.solve(G, Ri_A.conj().T @ Dt)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular effective manifold or noise covariance "
                         "(coherent or degenerate scenario)") from exc
    J = 2 * np.real(F * R_s.T)
    J = (J + J.T) / 2
    return np.linalg.inv(J)


def fisher_single(phi, geom: ArrayGeometry, thetas, noise: Optional[NoiseModel] = None) -> np.ndarray:
    """Per-DOA scalar ``F`` (Fisher information per unit source power / 2) for many DOAs."""
    noise = NoiseModel() if noise is None else noise
    W = as_array(phi)
    thetas = np.atleast_1d(np.asarray(thetas, float))
    At = W @ steering_matrix(geom, thetas)
    Dt = W @ steering_derivative_matrix(geom, thetas)
    R = noise.covariance(W)
    Ri_A = np.linalg.solve(R, At)
    Ri_D = np.linalg.solve(R, Dt)
    dd = np.einsum("mk,mk->k", Dt.conj(), Ri_D).real
    ad = np.einsum("mk,mk->k", At.conj(), Ri_D)
    aa = np.einsum("mk,mk->k", At.conj(), Ri_A).real
    with np.errstate(divide="ignore", invalid="ignore"):
        return dd - np.abs(ad) ** 2 / aa


def crb_curve(phi, geom: ArrayGeometry, thetas, snr: float,
              noise: Optional[NoiseModel] = None) -> np.ndarray:
    """Single-source CRB at each DOA in ``thetas``; non-identifiable DOAs give inf.

    ``snr`` is source power over total per-branch noise ``sigma1^2 + sigma2^2``.
    """
    noise = NoiseModel() if noise is None else noise
    F = fisher_single(phi, geom, thetas, noise)
    power = snr * noise.total
    with np.errstate(divide="ignore"):
        crb = 1.0 / (2 * F * power)
    return np.where(F > 0, crb, np.inf)


def crb_single(phi, geom: ArrayGeometry, theta0: float, rho: float,
               noise: Optional[NoiseModel] = None) -> float:
    """``1 / (2 F rho)`` for a single source at ``theta0``.

    With the default noise (``sigma1^2 = 1, sigma2^2 = 0``) ``rho`` is the
    input SNR ``R_ss / sigma1^2``.
    """
    if not rho > 0:
        raise ValueError("rho must be > 0")
    noise = NoiseModel() if noise is None else noise
    F = fisher_single(phi, geom, [theta0], noise)[0]
    if not F > 0:
        raise ValueError(f"direction theta0={theta0:.6g} is not identifiable (F <= 0)")
    return float(1.0 / (2 * F * rho * noise.total))


def worst_case_crb(phi, geom: ArrayGeometry, snr: float = 1.0, thetas0=None,
                   noise: Optional[NoiseModel] = None) -> float:
    thetas0 = default_theta0_grid() if thetas0 is None else thetas0
    return float(np.max(crb_curve(phi, geom, thetas0, snr, noise)))


# -- SNR comparison ------------------------------------------------------------

def snr_ratio(N: int, M: int, eta: float, noise: NoiseModel) -> float:
    """Average-SNR ratio of a compressive array (N -> M) over an M-element sparse array.

    With DOA-averaged signal power ``eta^2 N`` per unit source power after
    combining, ``rho_c / rho_s = eta^2 N (s1 + s2) / (eta^2 N s1 + M s2)``.  Tends
    to 1 for dominating signal noise (combining amplifies it along with the
    signal) and to ``eta^2 N / M`` for dominating measurement noise.
    """
    if M > N:
        raise ValueError("M must not exceed N")
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    s1, s2 = noise.sigma1_sq, noise.sigma2_sq
    g = eta**2 * N
    return float(g * (s1 + s2) / (g * s1 + M * s2))


def average_snr_compressive(N: int, M: int, eta: float, noise: NoiseModel,
                            power: float = 1.0) -> float:
    g = eta**2 * N
    return power * g / (g * noise.sigma1_sq + M * noise.sigma2_sq)


# -- sparse-array baseline -----------------------------------------------------

@dataclass
class SparseArrayResult:
    geometry: ArrayGeometry
    objective: float
    worst_crb: float
    mean_sidelobe: float
    start_objectives: list = field(default_factory=list)


def _sparse_positions(x, radius_bound):
    M = x.size // 2
    r = radius_bound * (0.5 + 0.5 * np.tanh(x[:M]))
    ang = x[M:]
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


def design_sparse_array(M: int, radius_bound: float, objective_weights: float = 0.5,
                        n_starts: int = 8, seed=0, snr: float = 1.0, thetas0=None,
                        grid=None, noise: Optional[NoiseModel] = None,
                        maxiter: int = 3000, n_jobs: int = 1,
                        crb_target: Optional[float] = None) -> SparseArrayResult:
    """Optimize M element positions inside a disc of radius ``radius_bound``.

    Minimizes ``(1 - w) * worst_crb / worst_crb(UCA_M) + w * mean_sidelobe`` with
    ``w = objective_weights`` by multi-start Nelder-Mead; non-identifiable
    layouts are penalized.  With ``crb_target`` the objective becomes the mean
    sidelobe level plus a quadratic penalty on ``worst_crb > crb_target``
    (sidelobes at matched CRB).
    """
    from .scf_design import run_starts

    if M < 2:
        raise ValueError("M must be >= 2")
    w = float(objective_weights)
    noise = NoiseModel() if noise is None else noise
    thetas0 = default_theta0_grid(36) if thetas0 is None else np.atleast_1d(thetas0)
    grid = AzimuthGrid.uniform(360) if grid is None else grid
    eye = np.eye(M)
    ref = ArrayGeometry.uca(M, radius_bound)
    crb_ref = worst_case_crb(eye, ref, snr, thetas0, noise)
    if not np.isfinite(crb_ref):
        crb_ref = 1.0

    def parts(x):
        geom = ArrayGeometry.from_positions(_sparse_positions(x, radius_bound))
        crb = worst_case_crb(eye, geom, snr, thetas0, noise)
        if w > 0:
            try:
                sl = mean_sidelobe_level(eye, geom, thetas0, grid)
            except ValueError:
                sl = 1.0
        else:
            sl = 0.0
        return geom, crb, sl

    if crb_target is not None:
        w = 1.0

    def objective(x):
        _, crb, sl = parts(x)
        if not np.isfinite(crb):
            return 1e6
        if crb_target is not None:
            return sl + 100.0 * max(0.0, crb / crb_target - 1.0) ** 2
        return (1 - w) * crb / crb_ref + w * sl

    def one(i, rng):
        x0 = np.concatenate([rng.normal(1.0, 1.0, M), rng.uniform(0, 2 * np.pi, M)])
        res = optimize.minimize(objective, x0, method="Nelder-Mead",
                                options={"maxiter": maxiter, "xatol": 1e-6, "fatol": 1e-9})
        return res.x, float(res.fun)

    outs = run_starts(one, n_starts, seed, n_jobs)
    objs = [o for _, o in outs]
    best = int(np.argmin(objs))
    geom, crb, sl = parts(outs[best][0])
    if w == 0:
        sl = mean_sidelobe_level(eye, geom, thetas0, grid)
    return SparseArrayResult(geom, objs[best], crb, sl, objs)
