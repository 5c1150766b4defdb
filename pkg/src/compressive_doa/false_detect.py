"""Analytic false-detection probability of the beamformer DOA estimator.

For a reference DOA theta0 and a sidelobe peak theta_q the difference
``X_q = |a0^H y|^2 - |aq^H y|^2`` (unit-norm effective steering vectors,
single snapshot) is an indefinite quadratic form in a non-zero-mean complex
Gaussian vector.  After whitening it reduces to ``sum_r lam_r |z_r|^2`` with
``z_r ~ CN(mu_r, 1)`` and at most two nonzero ``lam_r``.  ``P(X_q < 0)`` is
obtained by inverting the MGF along a vertical contour through the saddle
point, discretized with Gauss-Chebyshev nodes; ``P_d`` is bounded by the sum
over sidelobe peaks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .combiner import as_array
from .manifold import ArrayGeometry, AzimuthGrid, steering_matrix
from .performance import (
    NULL_TO_NULL,
    NoiseModel,
    _grid_points,
    normalized_correlation,
    profile_from_values,
)

#: Quadrature order used when none is given.
DEFAULT_G = 256
#: Side of the origin on which the inversion contour crosses the real axis.
#: -1 evaluates the MGF at ``-s_p (1 + j tan(tau/2))`` with ``s_p > 0`` the
#: saddle of ``ln(Psi(-u)/u)``; this is the choice that reproduces P(X < 0)
#: (checked against Monte Carlo in the test suite).
CONTOUR_SIGN = -1
_EIG_RTOL = 1e-12


@dataclass(frozen=True)
class QuadraticFormSpec:
    """Nonzero eigenvalues ``lam_r`` and noncentralities ``|mu_r|^2`` of X_q."""

    eigenvalues: np.ndarray
    noncentrality: np.ndarray
    provenance: tuple = (None, None)

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.eigenvalues, float))
        nc = np.atleast_1d(np.asarray(self.noncentrality, float))
        if lam.shape != nc.shape:
            raise ValueError("eigenvalues and noncentrality must have equal length")
        if lam.size > 2:
            raise ValueError("the difference form has rank at most 2")
        if np.any(nc < 0):
            raise ValueError("noncentrality parameters are squared moduli (>= 0)")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "noncentrality", nc)

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    def mean(self) -> float:
        return float(np.sum(self.eigenvalues * (1 + self.noncentrality)))

    def sample(self, n: int, rng) -> np.ndarray:
        """Draws of ``sum_r lam_r |z_r|^2`` with ``z_r ~ CN(mu_r, 1)``."""
        out = np.zeros(n)
        for lam, nc in zip(self.eigenvalues, self.noncentrality):
            z = np.sqrt(nc) + (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
            out += lam * np.abs(z) ** 2
        return out


@dataclass
class PdReport:
    theta0: float
    per_sidelobe: list
    union_bound: float
    G: int
    saddle_points: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta_q", "height", "P_q"])
            for t, h, p in self.per_sidelobe:
                w.writerow([repr(t), repr(h), repr(p)])
            w.writerow([])
            w.writerow(["theta0", "P_d", "G"])
            w.writerow([repr(self.theta0), repr(self.union_bound), self.G])


# -- quadratic form construction -----------------------------------------------

def _herm_sqrt(R: np.ndarray):
    lam, U = np.linalg.eigh(R)
    if lam.min() <= 1e-14 * max(lam.max(), 1e-300):
        raise ValueError("noise covariance R_nn is singular")
    sq = np.sqrt(lam)
    return (U * sq) @ U.conj().T, (U / sq) @ U.conj().T


def _specs_from_vectors(Rh, Rih, a0, aq, r):
    """Batched eigenpairs of ``B = R^{1/2}(a0 a0^H - aq aq^H)R^{1/2}``.

    ``a0, aq, r`` have shape (M, K).  Returns eigenvalues (K, 2) and
    noncentralities (K, 2); dropped eigenpairs are zeroed.
    """
    u = Rh @ a0
    v = Rh @ aq
    m = Rih @ r
    nu = np.linalg.norm(u, axis=0)
    nu_safe = np.where(nu > 0, nu, 1.0)
    e1 = u / nu_safe
    c = np.einsum("mk,mk->k", e1.conj(), v)
    w = v - e1 * c
    nw = np.linalg.norm(w, axis=0)
    scale = np.maximum(nu, np.linalg.norm(v, axis=0))
    ok2 = nw > 1e-12 * np.maximum(scale, 1e-300)
    e2 = np.where(ok2, w / np.where(ok2, nw, 1.0), 0.0)
    # coordinates of u, v in the (e1, e2) basis: u = (nu, 0), v = (c, nw)
    K = a0.shape[1]
    Bs = np.zeros((K, 2, 2), complex)
    Bs[:, 0, 0] = nu**2 - np.abs(c) ** 2
    Bs[:, 0, 1] = -c * nw
    Bs[:, 1, 0] = -np.conj(c) * nw
    Bs[:, 1, 1] = -(nw**2)
    lam, V = np.linalg.eigh(Bs)
    mc = np.stack([np.einsum("mk,mk->k", e1.conj(), m), np.einsum("mk,mk->k", e2.conj(), m)], axis=1)
    mu = np.einsum("kij,ki->kj", V.conj(), mc)
    nc = np.abs(mu) ** 2
    norm = np.max(np.abs(lam), axis=1, keepdims=True)
    keep = np.abs(lam) > _EIG_RTOL * np.maximum(norm, 1e-300)
    keep &= np.abs(lam) > 0
    lam = np.where(keep, lam, 0.0)
    nc = np.where(keep, nc, 0.0)
    return lam, nc


def _unit(x):
    n = np.linalg.norm(x, axis=0)
    return x / np.where(n > 0, n, 1.0)


def build_quadratic_spec(phi, geom: ArrayGeometry, theta0: float, thetaq: float,
                         sources: Optional[Sequence] = None,
                         noise: Optional[NoiseModel] = None) -> QuadraticFormSpec:
    """Quadratic-form parameters of ``D(theta0) - D(theta_q)``.

    ``sources`` is a list of ``(doa, complex amplitude)``; it defaults to a
    unit-amplitude source at ``theta0``.  The mean of the snapshot is
    ``r = sum_k a~_k s_k``.
    """
    noise = NoiseModel() if noise is None else noise
    W = as_array(phi)
    sources = [(theta0, 1.0)] if sources is None else list(sources)
    Rh, Rih = _herm_sqrt(noise.covariance(W))
    a = _unit(W @ steering_matrix(geom, [theta0, thetaq]))
    r = _mean_vector(W, geom, sources)
    lam, nc = _specs_from_vectors(Rh, Rih, a[:, :1], a[:, 1:], r[:, None])
    keep = lam[0] != 0
    order = np.argsort(-lam[0][keep])
    return QuadraticFormSpec(lam[0][keep][order], nc[0][keep][order], (theta0, thetaq))


def _mean_vector(W, geom, sources):
    doas = np.array([s[0] for s in sources], float)
    amps = np.array([s[1] for s in sources], complex)
    return (W @ steering_matrix(geom, doas)) @ amps


# -- MGF and saddle point ------------------------------------------------------

def mgf(spec: QuadraticFormSpec, s) -> complex:
    """``E[exp(s X)] = exp(sum |mu|^2 lam s / (1 - lam s)) / prod(1 - lam s)``."""
    s = np.asarray(s, complex)
    lam = spec.eigenvalues
    nc = spec.noncentrality
    if lam.size == 0:
        return np.ones_like(s) if s.ndim else complex(1.0)
    den = 1 - lam * s[..., None]
    if np.any(den == 0):
        raise ValueError("MGF evaluated at a pole")
    out = np.exp(np.sum(nc * lam * s[..., None] / den, axis=-1)) / np.prod(den, axis=-1)
    return out if out.ndim else complex(out)


def _log_kernel_derivs(u, lam, nc):
    """First and second derivative of ``ln(Psi(-u)/u)`` (batched)."""
    d = 1 + lam * u[..., None]
    f1 = -np.sum(nc * lam / d**2 + lam / d, axis=-1) - 1 / u
    f2 = np.sum(2 * nc * lam**2 / d**3 + lam**2 / d**2, axis=-1) + 1 / u**2
    return f1, f2


def _saddle_batch(lam: np.ndarray, nc: np.ndarray, tol: float = 1e-12, maxiter: int = 200):
    """Saddle points for rows of ``lam`` that have a negative eigenvalue."""
    neg = np.min(lam, axis=-1)
    hi = -1 / neg
    lo = np.zeros_like(hi)
    u = 0.5 * hi
    for _ in range(maxiter):
        f1, f2 = _log_kernel_derivs(u, lam, nc)
        lo = np.where(f1 < 0, u, lo)
        hi = np.where(f1 > 0, u, hi)
        step = u - f1 / f2
        bad = ~((step > lo) & (step < hi)) | ~np.isfinite(step)
        new = np.where(bad, 0.5 * (lo + hi), step)
        done = (np.abs(f1) * u <= tol) | (hi - lo <= 4 * np.finfo(float).eps * hi)
        if np.all(done):
            break
        u = np.where(done, u, new)
    return u


def saddle_point(spec: QuadraticFormSpec) -> float:
    """Saddle point ``s_p`` of ``ln(Psi(-u)/u)`` on ``0 < u < 1/|lam_min|``.

    Newton iteration from the interval midpoint, safeguarded by bisection.
    Needs at least one negative eigenvalue.
    """
    lam = spec.eigenvalues
    if lam.size == 0 or lam.min() >= 0:
        raise ValueError("no saddle bracket: the form has no negative eigenvalue")
    return float(_saddle_batch(lam[None, :], spec.noncentrality[None, :])[0])


def saddle_derivatives(spec: QuadraticFormSpec, u: float):
    f1, f2 = _log_kernel_derivs(np.array([u]), spec.eigenvalues[None], spec.noncentrality[None])
    return float(f1[0]), float(f2[0])


# -- quadrature ----------------------------------------------------------------

def _pq_batch(lam: np.ndarray, nc: np.ndarray, G: int = DEFAULT_G, sign: int = CONTOUR_SIGN):
    """P(X < 0) for each row (batched); also returns saddle points (nan if unused)."""
    lam = np.atleast_2d(lam)
    nc = np.atleast_2d(nc)
    n = lam.shape[0]
    out = np.empty(n)
    sp = np.full(n, np.nan)
    has_pos = np.any(lam > 0, axis=1)
    has_neg = np.any(lam < 0, axis=1)
    out[~has_pos & ~has_neg] = 0.5
    out[has_pos & ~has_neg] = 0.0
    out[~has_pos & has_neg] = 1.0
    mixed = has_pos & has_neg
    if np.any(mixed):
        L, C = lam[mixed], nc[mixed]
        if sign < 0:
            s = _saddle_batch(L, C)
        else:
            s = _saddle_batch(-L, C)
        sp[mixed] = s
        tau = (2 * np.arange(1, G + 1) - 1) * np.pi / (2 * G)
        t = np.tan(tau / 2)
        z = sign * s[:, None] * (1 + 1j * t[None, :])
        den = 1 - L[:, None, :] * z[..., None]
        psi = np.exp(np.sum(C[:, None, :] * L[:, None, :] * z[..., None] / den, axis=-1))
        psi /= np.prod(den, axis=-1)
        val = np.real((1 - 1j * t[None, :]) * psi).sum(axis=1) / (2 * G)
        out[mixed] = val
    return np.clip(out, 0.0, 1.0), sp


def pq(spec: QuadraticFormSpec, G: int = DEFAULT_G) -> float:
    """``P(X_q < 0) ~ (1/2G) sum_g Re psi_hat((2g - 1) pi / 2G)``.

    Degenerate forms: no eigenvalues -> 1/2; only positive -> 0; only negative -> 1.
    """
    return float(_pq_batch(spec.eigenvalues[None], spec.noncentrality[None], G)[0][0])


def pq_convergence(spec: QuadraticFormSpec, G: int = DEFAULT_G) -> float:
    """``|pq(G) - pq(2G)|``."""
    return abs(pq(spec, G) - pq(spec, 2 * G))


# -- union bound ---------------------------------------------------------------

def _spectrum_noise_free(W, geom, pts, r):
    At = _unit(W @ steering_matrix(geom, pts))
    return np.abs(At.conj().T @ r) ** 2


def union_bound_pd(phi, geom: ArrayGeometry, theta0: float, sources=None,
                   noise: Optional[NoiseModel] = None, G: int = DEFAULT_G,
                   mainlobe_def: str = NULL_TO_NULL, grid=None, snr: Optional[float] = None):
    """Union bound on the false-detection probability around ``theta0``.

    ``sources`` lists ``(doa, amplitude)`` with ``theta0`` the strongest; if
    omitted a single in-phase source at ``theta0`` with power ``snr * noise.total``
    is used.  For one source the sidelobe peaks are those of the normalized
    correlation ``b(., theta0)``; with several sources they are the peaks of the
    noise-free beamformer spectrum outside the mainlobe of ``theta0``.
    """
    noise = NoiseModel() if noise is None else noise
    W = as_array(phi)
    grid = AzimuthGrid.uniform(360) if grid is None else grid
    pts = _grid_points(grid)
    if sources is None:
        s0 = np.sqrt((1.0 if snr is None else snr) * noise.total)
        sources = [(theta0, s0)]
    sources = list(sources)
    b = normalized_correlation(W, geom, theta0, pts)[:, 0]
    if len(sources) == 1:
        _, peaks = profile_from_values(b, pts, theta0, mainlobe_def)
    else:
        r = _mean_vector(W, geom, sources)
        spec_vals = _spectrum_noise_free(W, geom, pts, r)
        _, peaks = profile_from_values(spec_vals, pts, theta0, mainlobe_def, mainlobe_values=b)
        peaks = [(t, float(normalized_correlation(W, geom, theta0, [t])[0, 0])) for t, _ in peaks]
    if not peaks:
        return PdReport(float(theta0), [], 0.0, G, [])
    Rh, Rih = _herm_sqrt(noise.covariance(W))
    tq = np.array([p[0] for p in peaks])
    a0 = _unit(W @ steering_matrix(geom, [theta0]))
    aq = _unit(W @ steering_matrix(geom, tq))
    r = _mean_vector(W, geom, sources)
    K = tq.size
    lam, nc = _specs_from_vectors(Rh, Rih, np.repeat(a0, K, axis=1), aq,
                                  np.repeat(r[:, None], K, axis=1))
    p, sp = _pq_batch(lam, nc, G)
    rows = sorted(((float(t), float(min(max(h, 0.0), 1.0)), float(pp))
                   for (t, h), pp in zip(peaks, p)), key=lambda x: -x[1])
    return PdReport(float(theta0), rows, float(min(1.0, p.sum())), G,
                    [float(x) for x in sp])


def pd_curve(phi, geom: ArrayGeometry, thetas0, snr: float, noise: Optional[NoiseModel] = None,
             G: int = DEFAULT_G, mainlobe_def: str = NULL_TO_NULL, grid=None,
             extra_sources: Sequence = (), clip: bool = True) -> np.ndarray:
    """Union-bound ``P_d`` at every reference DOA (vectorized over DOAs).

    ``clip=False`` returns the raw sum of the ``P_q`` terms (useful as a
    smooth optimization constraint, since the clipped value saturates at 1).

    ``extra_sources`` lists weaker sources as ``(offset, amplitude_ratio)``
    relative to the reference source, whose power is ``snr * noise.total``.
    """
    noise = NoiseModel() if noise is None else noise
    W = as_array(phi)
    grid = AzimuthGrid.uniform(360) if grid is None else grid
    pts = _grid_points(grid)
    thetas0 = np.atleast_1d(np.asarray(thetas0, float))
    s0 = np.sqrt(snr * noise.total)
    At = W @ steering_matrix(geom, pts)
    A0 = W @ steering_matrix(geom, thetas0)
    b = normalized_correlation(W, geom, thetas0, pts)
    r = A0 * s0
    for off, ratio in extra_sources:
        r = r + W @ steering_matrix(geom, thetas0 + off) * (s0 * ratio)
    if extra_sources:
        vals = np.abs(_unit(At).conj().T @ r) ** 2
    else:
        vals = b
    idx0, tq = [], []
    for k, t0 in enumerate(thetas0):
        _, peaks = profile_from_values(vals[:, k], pts, t0, mainlobe_def, mainlobe_values=b[:, k])
        for t, _ in peaks:
            idx0.append(k)
            tq.append(t)
    pd = np.zeros(thetas0.size)
    if not tq:
        return pd
    idx0 = np.array(idx0)
    Rh, Rih = _herm_sqrt(noise.covariance(W))
    a0 = _unit(A0)[:, idx0]
    aq = _unit(W @ steering_matrix(geom, np.array(tq)))
    lam, nc = _specs_from_vectors(Rh, Rih, a0, aq, r[:, idx0])
    p, _ = _pq_batch(lam, nc, G)
    np.add.at(pd, idx0, p)
    return np.minimum(pd, 1.0) if clip else pd
