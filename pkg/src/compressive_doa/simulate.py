"""Monte Carlo experiments on a compressive array.

Snapshots follow ``y = Phi (A s + v) + w`` with white circular Gaussian ``v``
(variance ``sigma1^2``) and ``w`` (``sigma2^2``).  DOAs are estimated with the
normalized beamformer.  Trials are processed in fixed-size chunks, each with
its own child seed, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .combiner import as_array, random_kernels
from .manifold import ArrayGeometry, AzimuthGrid, steering_matrix
from .performance import (NULL_TO_NULL, NoiseModel, _grid_points, _inside, _is_circular,
                          _mainlobe_bounds, _refine, crb_curve, default_theta0_grid,
                          mean_sidelobe_level, normalized_correlation)

log = logging.getLogger(__name__)

CHUNK = 1000
STRONGEST = "strongest-source"


@dataclass(frozen=True)
class Scenario:
    """Sources as ``(doa, amplitude)`` pairs; amplitudes are relative.

    The strongest source gets power ``10^(snr_db/10) * noise.total``, the
    others keep their amplitude ratio (and phase) to it.
    """

    sources: tuple
    snr_db: float = 0.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    snapshots: int = 1
    snr_reference: str = STRONGEST

    def __post_init__(self):
        src = tuple((float(t), complex(a)) for t, a in self.sources)
        if not src:
            raise ValueError("scenario needs at least one source")
        if any(a == 0 for _, a in src):
            raise ValueError("source amplitudes must be nonzero")
        if self.snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        if self.snr_reference != STRONGEST:
            raise ValueError(f"unsupported SNR reference {self.snr_reference!r}")
        object.__setattr__(self, "sources", src)

    @classmethod
    def single(cls, doa: float, snr_db: float = 0.0, noise=None, snapshots: int = 1):
        return cls(((doa, 1.0),), snr_db, noise or NoiseModel(), snapshots)

    @classmethod
    def two_sources(cls, doa: float, separation: float, ratio_db: float = -6.0,
                    snr_db: float = 0.0, noise=None, snapshots: int = 1):
        """In-phase pair at ``doa`` and ``doa + separation``, power ratio ``ratio_db``."""
        amp = 10 ** (ratio_db / 20)
        return cls(((doa, 1.0), (doa + separation, amp)), snr_db, noise or NoiseModel(),
                   snapshots)

    @property
    def snr(self) -> float:
        return 10 ** (self.snr_db / 10)

    @property
    def doas(self) -> np.ndarray:
        return np.array([t for t, _ in self.sources])

    @property
    def amplitudes(self) -> np.ndarray:
        """Absolute complex amplitudes."""
        a = np.array([s for _, s in self.sources])
        return a / np.abs(a).max() * np.sqrt(self.snr * self.noise.total)

    @property
    def strongest(self) -> int:
        return int(np.argmax(np.abs([s for _, s in self.sources])))


def _noise(shape, var, rng):
    if var == 0:
        return np.zeros(shape, complex)
    z = rng.standard_normal((2,) + shape)
    return np.sqrt(var / 2) * (z[0] + 1j * z[1])


def _observe(W, x, noise: NoiseModel, rng):
    """``W (x + v) + w`` for a batch of noise-free antenna vectors ``x`` (N x n)."""
    M, N = W.shape
    n = x.shape[1]
    y = W @ (x + _noise((N, n), noise.sigma1_sq, rng))
    return y + _noise((M, n), noise.sigma2_sq, rng)


def synthesize_snapshots(phi, geom: ArrayGeometry, scenario: Scenario, seed=None) -> np.ndarray:
    """M x T snapshots with fixed source amplitudes and fresh noise per snapshot."""
    W = as_array(phi)
    rng = np.random.default_rng(seed)
    x = steering_matrix(geom, scenario.doas) @ scenario.amplitudes
    X = np.repeat(x[:, None], scenario.snapshots, axis=1)
    return _observe(W, X, scenario.noise, rng)


def _unit_manifold(W, geom, pts):
    At = W @ steering_matrix(geom, pts)
    n = np.linalg.norm(At, axis=0)
    if np.any(n < 1e-12 * max(n.max(), 1e-300)):
        bad = pts[np.argmin(n)]
        raise ValueError(f"blind spot: effective steering vector vanishes at theta={bad:.6g}")
    return At / n


def beamformer_spectrum(phi, geom: ArrayGeometry, snapshots, grid=None) -> np.ndarray:
    """``a~^H R a~ / ||a~||^2`` on the grid, with ``R`` the sample covariance."""
    W = as_array(phi)
    pts = _grid_points(AzimuthGrid.uniform(360) if grid is None else grid)
    Y = np.atleast_2d(np.asarray(snapshots, complex))
    if Y.shape[0] != W.shape[0] and Y.shape[1] == W.shape[0]:
        Y = Y.T
    U = _unit_manifold(W, geom, pts)
    return np.mean(np.abs(U.conj().T @ Y) ** 2, axis=1)


def estimate_doa(spectrum, grid) -> float:
    """Grid argmax (lowest index on ties) refined by a 3-point parabola."""
    pts = _grid_points(grid)
    d = np.asarray(spectrum, float)
    i = int(np.argmax(d))
    t, _ = _refine(pts, d, i, _is_circular(pts))
    return float(np.mod(t, 2 * np.pi)) if _is_circular(pts) else float(t)


def _chunks(trials: int, seed):
    n = -(-trials // CHUNK)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(n)
    sizes = [CHUNK] * (n - 1) + [trials - CHUNK * (n - 1)]
    starts = np.cumsum([0] + sizes[:-1])
    return list(zip(starts, sizes, seeds))


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, items))


def _mainlobe_masks(W, geom, thetas0, pts, mainlobe_def):
    b = normalized_correlation(W, geom, thetas0, pts)
    circ = _is_circular(pts)
    idx = np.arange(pts.size)
    masks = np.empty((len(thetas0), pts.size), bool)
    for k, t0 in enumerate(thetas0):
        left, right = _mainlobe_bounds(b[:, k], pts, t0, circ, mainlobe_def)
        masks[k] = _inside(idx, left, right, pts.size, circ)
    return masks


def empirical_pd(phi, geom: ArrayGeometry, scenario: Scenario, trials: int = 10_000,
                 mainlobe_def: str = NULL_TO_NULL, seed=None, grid=None, thetas0=None,
                 n_jobs: int = 1):
    """Fraction of single-snapshot trials whose beamformer peak misses the mainlobe.

    The mainlobe is taken around the strongest source.  With ``thetas0`` the
    whole source configuration is rotated so that trial ``k`` places the
    strongest source at ``thetas0[k % len(thetas0)]``, which estimates the
    DOA-averaged rate.  Returns ``(pd, standard_error)``.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    W = as_array(phi)
    pts = _grid_points(AzimuthGrid.uniform(360) if grid is None else grid)
    ref = scenario.doas[scenario.strongest]
    thetas0 = np.array([ref]) if thetas0 is None else np.atleast_1d(np.asarray(thetas0, float))
    offsets = scenario.doas - ref
    amps = scenario.amplitudes
    X0 = np.stack([steering_matrix(geom, t0 + offsets) @ amps for t0 in thetas0], axis=1)
    masks = _mainlobe_masks(W, geom, thetas0, pts, mainlobe_def)
    U = _unit_manifold(W, geom, pts)

    def run(chunk):
        start, size, ss = chunk
        rng = np.random.default_rng(ss)
        which = (start + np.arange(size)) % thetas0.size
        Y = _observe(W, X0[:, which], scenario.noise, rng)
        peak = np.argmax(np.abs(U.conj().T @ Y) ** 2, axis=0)
        return int(np.count_nonzero(~masks[which, peak]))

    misses = sum(_map(run, _chunks(trials, seed), n_jobs))
    p = misses / trials
    return p, float(np.sqrt(p * (1 - p) / trials))


def _golden_refine(U_of, Y, lo, hi, iters: int = 60):
    """Vectorized golden-section maximization of ``|u(theta)^H y|^2`` per column."""
    g = (np.sqrt(5) - 1) / 2
    a, b = lo.copy(), hi.copy()

    def f(t):
        return np.abs(np.einsum("mk,mk->k", U_of(t).conj(), Y)) ** 2

    for _ in range(iters):
        c, d = b - g * (b - a), a + g * (b - a)
        left = f(c) > f(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    return 0.5 * (a + b)


def _circ_err(est, true):
    return np.angle(np.exp(1j * (est - true)))


@dataclass
class RmseRow:
    snr_db: float
    rmse: float
    sqrt_crb: float
    trials: int


def rmse_study(phi, geom: ArrayGeometry, snr_db: Sequence[float], trials: int = 10_000,
               thetas0=None, noise: Optional[NoiseModel] = None, seed=None, grid=None,
               n_jobs: int = 1) -> list:
    """Single-source, single-snapshot DOA RMSE versus SNR.

    Each trial takes the beamformer grid peak and refines it by golden-section
    search on the continuous spectrum within one grid cell.  ``sqrt_crb`` is
    the square root of the CRB averaged over the DOAs used.
    """
    W = as_array(phi)
    noise = NoiseModel() if noise is None else noise
    pts = _grid_points(AzimuthGrid.uniform(360) if grid is None else grid)
    thetas0 = default_theta0_grid(36) if thetas0 is None else np.atleast_1d(thetas0)
    U = _unit_manifold(W, geom, pts)
    h = pts[1] - pts[0]

    def U_of(t):
        A = W @ steering_matrix(geom, t)
        return A / np.linalg.norm(A, axis=0)

    rows = []
    children = np.random.SeedSequence(seed).spawn(len(snr_db))
    for s_db, ss in zip(snr_db, children):
        snr = 10 ** (s_db / 10)
        amp = np.sqrt(snr * noise.total)
        X0 = amp * steering_matrix(geom, thetas0)

        def run(chunk):
            start, size, cs = chunk
            rng = np.random.default_rng(cs)
            which = (start + np.arange(size)) % thetas0.size
            Y = _observe(W, X0[:, which], noise, rng)
            i = np.argmax(np.abs(U.conj().T @ Y) ** 2, axis=0)
            est = _golden_refine(U_of, Y, pts[i] - h, pts[i] + h)
            return float(np.sum(_circ_err(est, thetas0[which]) ** 2))

        sq = sum(_map(run, _chunks(trials, ss), n_jobs))
        crb = crb_curve(W, geom, thetas0, snr, noise)
        n_used = np.bincount(np.arange(trials) % thetas0.size, minlength=thetas0.size)
        mean_crb = float(np.sum(crb * n_used) / trials)
        rows.append(RmseRow(float(s_db), float(np.sqrt(sq / trials)), float(np.sqrt(mean_crb)),
                            trials))
    return rows


# -- random-kernel ensembles ---------------------------------------------------

CRB = "crb"
MEAN_SIDELOBE = "mean_sidelobe"


@dataclass
class CcdfTable:
    """Empirical CCDF ``P(X >= value)`` of a metric over random kernels."""

    metric: str
    values: np.ndarray = field(repr=False)
    levels: np.ndarray = field(repr=False)
    n_realizations: int
    references: dict = field(default_factory=dict)

    def fraction_above(self, name: str) -> float:
        """Share of random kernels with a metric strictly above the reference."""
        return float(np.mean(self.values > self.references[name]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "ccdf"])
            for v, c in zip(self.values, self.levels):
                w.writerow([repr(float(v)), repr(float(c))])
            if self.references:
                w.writerow([])
                w.writerow(["reference", "value", "fraction_above"])
                for k in sorted(self.references):
                    w.writerow([k, repr(float(self.references[k])),
                                repr(self.fraction_above(k))])


def design_metric(phi, geom: ArrayGeometry, metric: str, snr: float = 1.0, thetas0=None,
                  noise: Optional[NoiseModel] = None, extra_sources=(), grid=None) -> float:
    """Worst-case CRB (``crb``) or mean sidelobe level (``mean_sidelobe``).

    Non-identifiable or blind-spot designs score ``inf``.
    """
    thetas0 = default_theta0_grid() if thetas0 is None else thetas0
    if metric == CRB:
        if extra_sources:
            from .crb_design import CrbDesignSpec, _crb_values
            spec = CrbDesignSpec(geom, as_array(phi).shape[0], rho_th=snr,
                                 noise=noise or NoiseModel(), extra_sources=tuple(extra_sources),
                                 n_starts=1, epsilon0=0.5)
            return float(np.max(_crb_values(as_array(phi), spec, thetas0)))
        return float(np.max(crb_curve(phi, geom, thetas0, snr, noise)))
    if metric == MEAN_SIDELOBE:
        try:
            return mean_sidelobe_level(phi, geom, thetas0, grid)
        except ValueError:
            return np.inf
    raise ValueError(f"unknown metric {metric!r}")


def ccdf_study(geom: ArrayGeometry, M: int, n_realizations: int, metric: str,
               design_refs: Optional[dict] = None, snr: float = 1.0, seed=None, thetas0=None,
               noise: Optional[NoiseModel] = None, extra_sources=(), eta: float = 1.0,
               n_jobs: int = 1) -> CcdfTable:
    """CCDF of ``metric`` over ``n_realizations`` random fully meshed kernels."""
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    kernels = random_kernels(M, geom.n_elements, n_realizations, seed, eta)

    def one(k):
        return design_metric(k, geom, metric, snr, thetas0, noise, extra_sources)

    vals = np.sort(np.array(_map(one, kernels, n_jobs)))
    n = vals.size
    levels = (n - np.arange(n)) / n
    refs = {name: design_metric(m, geom, metric, snr, thetas0, noise, extra_sources)
            for name, m in (design_refs or {}).items()}
    return CcdfTable(metric, vals, levels, n, refs)


# -- adaptive focusing ---------------------------------------------------------

@dataclass
class AdaptiveStep:
    step: int
    estimates: list
    worst_crb: float
    rescan: bool
    fallback: bool = False
    design: object = field(default=None, repr=False)


def _peaks(spec, pts, k):
    lo, hi = np.roll(spec, 1), np.roll(spec, -1)
    cand = np.flatnonzero((spec >= lo) & (spec > hi))
    cand = cand[np.argsort(-spec[cand], kind="stable")][:k]
    return [_refined_peak(spec, pts, int(i)) for i in sorted(cand)]


def _refined_peak(spec, pts, i) -> float:
    t, _ = _refine(pts, spec, i, True)
    return float(np.mod(t, 2 * np.pi))


def focus_weights(pts, centers, halfwidth: float, outside: float = 0.05) -> np.ndarray:
    """Weights emphasizing grid pairs that both fall near one of ``centers``."""
    from .scf_design import circular_distance
    inside = np.zeros(pts.size, bool)
    for c in centers:
        inside |= circular_distance(pts, c) <= halfwidth
    w = np.where(inside, 1.0, outside)
    return np.outer(w, w)


def adaptive_loop(initial, geom: ArrayGeometry, scene: Callable[[int], Scenario], steps: int,
                  rescan_period: int = 5, n_sources: int = 1, seed=None, halfwidth: float = 0.3,
                  n_starts: int = 2, grid_size: int = 120, designer: Optional[Callable] = None):
    """Estimate, focus, repeat.

    Step 1 (and every ``rescan_period``-th step after it) uses ``initial``.
    Other steps use a design focused on the regions within ``halfwidth`` of
    the previous estimates.  ``designer(centers, halfwidth, rng)`` may be
    given; by default a weighted SCF fit to the full array's correlation is
    used.  A failing redesign keeps the previous design and is flagged.
    """
    from .scf_design import DesignTarget, optimize_scf, reference_target

    if steps < 1:
        raise ValueError("steps must be >= 1")
    M = as_array(initial).shape[0]
    dgrid = AzimuthGrid.uniform(grid_size)
    T_full = reference_target(geom, dgrid)
    scan_pts = _grid_points(AzimuthGrid.uniform(360))
    children = np.random.SeedSequence(seed).spawn(2 * steps)

    def default_designer(centers, hw, ss):
        tgt = DesignTarget(dgrid, T_full, np.sqrt(focus_weights(dgrid.points, centers, hw)))
        return optimize_scf(geom, tgt, M, n_starts=n_starts, seed=ss).matrix

    make = designer or default_designer
    trace, design, est = [], initial, []
    for step in range(1, steps + 1):
        rescan = (step - 1) % rescan_period == 0 or not est
        fallback = False
        if rescan:
            design = initial
        else:
            try:
                design = make(est, halfwidth, children[2 * step - 1])
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                log.warning("redesign failed at step %d: %s", step, exc)
                fallback = True
        sc = scene(step)
        Y = synthesize_snapshots(design, geom, sc, children[2 * step - 2])
        spec = beamformer_spectrum(design, geom, Y, scan_pts)
        est = _peaks(spec, scan_pts, n_sources)
        region = np.concatenate([np.linspace(c - halfwidth, c + halfwidth, 9) for c in est])
        crb = float(np.max(crb_curve(design, geom, np.mod(region, 2 * np.pi), sc.snr, sc.noise)))
        trace.append(AdaptiveStep(step, est, crb, rescan, fallback, design))
    return trace


def write_adaptive_csv(trace, path, n_sources: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"theta_hat_{k + 1}" for k in range(n_sources)]
                   + ["worst_crb", "rescan"])
        for s in trace:
            th = [repr(float(t)) for t in s.estimates] + [""] * (n_sources - len(s.estimates))
            w.writerow([s.step] + th + [repr(s.worst_crb), int(s.rescan)])


def write_rmse_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snr_db", "rmse", "sqrt_crb"])
        for r in rows:
            w.writerow([repr(r.snr_db), repr(r.rmse), repr(r.sqrt_crb)])
