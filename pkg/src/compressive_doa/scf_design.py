"""Combining-matrix design by fitting the spatial correlation function (SCF).

The SCF of the compressed array sampled on a grid is ``A^H Phi^H Phi A``.  The
design problem fits it to a target ``T`` in (weighted) Frobenius norm, either
in closed form (unconstrained Phi, orthogonal manifold) or numerically over
the phases of a structured Phi.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from . import combiner
from .combiner import CombiningMatrix, PhaseParametrization
from .manifold import ArrayGeometry, AzimuthGrid, manifold_matrix, orthogonality_deviation

log = logging.getLogger(__name__)

#: Relative deviation of ``A A^H`` from ``C I`` above which the closed form is heuristic.
ORTH_TOL = 1e-8


@dataclass(frozen=True)
class DesignTarget:
    grid: AzimuthGrid
    target: np.ndarray = field(repr=False)
    weight: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        P = len(self.grid)
        T = np.asarray(self.target, dtype=complex)
        if T.shape != (P, P):
            raise ValueError(f"target must be {P}x{P}, got {T.shape}")
        if not np.allclose(T, T.conj().T, atol=1e-10 * max(1.0, np.abs(T).max())):
            raise ValueError("target must be Hermitian")
        object.__setattr__(self, "target", T)
        W = np.ones((P, P)) if self.weight is None else np.asarray(self.weight, float)
        if W.shape != (P, P):
            raise ValueError(f"weight must be {P}x{P}, got {W.shape}")
        if np.any(W < 0) or not np.allclose(W, W.T):
            raise ValueError("weight must be symmetric and nonnegative")
        object.__setattr__(self, "weight", W)


@dataclass
class DesignResult:
    """Outcome of a (multi-start) design run.

    ``cost`` is always re-evaluated on ``matrix``; ``start_costs`` and
    ``converged`` are indexed by start.
    """

    matrix: CombiningMatrix
    cost: float
    starts_used: int = 1
    start_costs: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    seed: Optional[int] = None
    heuristic: bool = False
    clamped: bool = False
    feasible: bool = True
    info: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "cost": self.cost,
            "starts_used": self.starts_used,
            "start_costs": [float(c) for c in self.start_costs],
            "converged": [bool(c) for c in self.converged],
            "seed": self.seed,
            "heuristic": self.heuristic,
            "clamped": self.clamped,
            "feasible": self.feasible,
            **{k: _jsonable(v) for k, v in self.info.items()},
        }

    def save(self, path) -> None:
        """Write the matrix text file and a ``.json`` metadata sidecar next to it."""
        combiner.save(self.matrix, path)
        with open(str(path) + ".json", "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


# -- cost ----------------------------------------------------------------------

def scf_matrix(phi, A: np.ndarray) -> np.ndarray:
    """Sampled SCF ``A^H Phi^H Phi A`` (P x P)."""
    B = combiner.effective_manifold(phi, A)
    return B.conj().T @ B


def error_matrix(phi, A: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Entrywise modulus ``|A^H Phi^H Phi A - T|``."""
    G = scf_matrix(phi, A)
    T = np.asarray(T)
    if T.shape != G.shape:
        raise ValueError(f"target shape {T.shape} does not match grid size {G.shape}")
    return np.abs(G - T)


def weighted_scf_cost(phi, A: np.ndarray, target: DesignTarget | np.ndarray,
                      weight: Optional[np.ndarray] = None) -> float:
    """``sum((W * E)**2)``; with W all ones this is ``||E||_F^2``."""
    if isinstance(target, DesignTarget):
        T, W = target.target, target.weight
    else:
        T = target
        W = weight
    E = error_matrix(phi, A, T)
    if W is None:
        return float(np.sum(E**2))
    W = np.asarray(W, float)
    if W.shape != E.shape:
        raise ValueError("weight shape mismatch")
    return float(np.sum((W * E) ** 2))


def _phase_objective(x, mask, scale, A, T, W2):
    phi = np.zeros(mask.shape, complex)
    phi[mask] = scale * np.exp(1j * x)
    B = phi @ A
    E = B.conj().T @ B - T
    R = W2 * E
    cost = float(np.sum(W2 * (E.real**2 + E.imag**2)))
    G = 2 * (B @ (R + R.conj().T)) @ A.conj().T
    # dPhi = j Phi dphi  ->  d cost / d phi = Re(conj(G) j Phi) = -Im(conj(G) Phi)
    grad = -np.imag(np.conj(G[mask]) * phi[mask])
    return cost, grad


def phase_gradient(p: PhaseParametrization, A: np.ndarray, target: DesignTarget) -> np.ndarray:
    """Analytic gradient of the weighted SCF cost with respect to the phases."""
    mask = p.mask
    scale = p.efficiency / np.sqrt(p.branch_count)
    W2 = target.weight**2
    _, g = _phase_objective(np.asarray(p.phases)[mask], mask, scale, A, target.target, W2)
    out = np.zeros(mask.shape)
    out[mask] = g
    return out


# -- closed form ---------------------------------------------------------------

def _canonical_eigh(S: np.ndarray):
    lam, U = np.linalg.eigh(S)
    order = np.argsort(-lam, kind="stable")
    lam, U = lam[order], U[:, order]
    for k in range(U.shape[1]):
        col = U[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size:
            c = col[nz[0]]
            U[:, k] = col * (np.abs(c) / c)
    return lam, U


def closed_form_design(A: np.ndarray, T: np.ndarray, M: int) -> DesignResult:
    """Global minimizer of ``||A^H Phi^H Phi A - T||_F^2`` over unconstrained Phi.

    Valid when ``A A^H = C I``; then ``Phi^H Phi`` is the best PSD rank-M
    approximation of ``A T A^H / C^2`` and ``Phi = Lambda_M^{1/2} U_M^H``.  Any
    unitary left factor is equally optimal.  If the orthogonality condition
    fails the result is returned as a heuristic (``heuristic=True``); negative
    retained eigenvalues are clamped to zero (``clamped=True``).
    """
    A = np.asarray(A, complex)
    T = np.asarray(T, complex)
    N = A.shape[0]
    if M > N:
        raise ValueError("M must not exceed N")
    dev = orthogonality_deviation(A)
    heuristic = dev > ORTH_TOL
    if heuristic:
        warnings.warn(f"A A^H deviates from C I by {dev:.2e}; closed form is heuristic",
                      RuntimeWarning, stacklevel=2)
    C = np.trace(A @ A.conj().T).real / N
    S = A @ T @ A.conj().T / C**2
    S = (S + S.conj().T) / 2
    lam, U = _canonical_eigh(S)
    lam_m = lam[:M]
    clamped = bool(np.any(lam_m < 0))
    lam_m = np.clip(lam_m, 0, None)
    phi = np.sqrt(lam_m)[:, None] * U[:, :M].conj().T
    mat = combiner.unconstrained(phi)
    cost = weighted_scf_cost(mat, A, T)
    return DesignResult(mat, cost, heuristic=heuristic, clamped=clamped,
                        info={"orthogonality_deviation": dev, "eigenvalues": lam})


def row_orthogonal_matrix(M: int, N: int, norm: float, rng) -> np.ndarray:
    """Random M x N matrix with orthogonal rows of equal norm."""
    Z = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
    Q, _ = np.linalg.qr(Z)
    return norm * Q[:, :M].conj().T


def optimize_unconstrained(A: np.ndarray, T: np.ndarray, M: int, n_starts: int = 50, seed=0,
                           weight: Optional[np.ndarray] = None, n_jobs: int = 1) -> DesignResult:
    """Multi-start L-BFGS-B over an arbitrary complex M x N matrix.

    Numeric counterpart of :func:`closed_form_design`; works for any manifold.
    """
    A = np.asarray(A, complex)
    T = np.asarray(T, complex)
    N = A.shape[0]
    W2 = np.ones(T.shape) if weight is None else np.asarray(weight, float) ** 2
    scale = np.sqrt(np.abs(np.trace(T)) / max(np.trace(A.conj().T @ A).real, 1e-300))

    def fun(x):
        phi = (x[: M * N] + 1j * x[M * N:]).reshape(M, N)
        B = phi @ A
        E = B.conj().T @ B - T
        R = W2 * E
        G = 2 * (B @ (R + R.conj().T)) @ A.conj().T
        cost = float(np.sum(W2 * (E.real**2 + E.imag**2)))
        return cost, np.concatenate([G.real.ravel(), G.imag.ravel()])

    def one(i, rng):
        x0 = scale * rng.standard_normal(2 * M * N)
        res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                                options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-11})
        return res.x, float(res.fun), bool(res.success)

    outs = run_starts(one, n_starts, seed, n_jobs)
    costs = [c for _, c, _ in outs]
    best = int(np.argmin(costs))
    x = outs[best][0]
    mat = combiner.unconstrained((x[: M * N] + 1j * x[M * N:]).reshape(M, N))
    return DesignResult(mat, weighted_scf_cost(mat, A, T, None if weight is None else weight),
                        len(outs), costs, [c for _, _, c in outs], seed=seed,
                        info={"best_start": best})


# -- targets and weights -------------------------------------------------------

def reference_target(ref_geom: ArrayGeometry, grid: AzimuthGrid, gain: Optional[float] = None):
    """``T = A_ref^H A_ref`` of a reference array, optionally rescaled to diagonal ``gain``."""
    A = manifold_matrix(ref_geom, grid)
    T = A.conj().T @ A
    if gain is not None:
        T = T * (gain / ref_geom.n_elements)
    return T


def ideal_target(grid: AzimuthGrid, gain: float) -> np.ndarray:
    return gain * np.eye(len(grid), dtype=complex)


def circular_distance(a, b):
    d = np.abs(np.mod(np.subtract(a, b) + np.pi, 2 * np.pi) - np.pi)
    return d


def block_weights(grid: AzimuthGrid, mainlobe: float, transition: float = 0.0,
                  w_main: float = 1.0, w_transition: float = 0.0,
                  w_side: float = 1.0) -> np.ndarray:
    """Weights by angular separation of the grid pair.

    Pairs closer than ``mainlobe`` get ``w_main``, pairs within a further
    ``transition`` band get ``w_transition``, the rest ``w_side``.
    """
    th = grid.points
    d = circular_distance(th[:, None], th[None, :])
    W = np.full(d.shape, float(w_side))
    W[d < mainlobe + transition] = w_transition
    W[d < mainlobe] = w_main
    return W


# -- numeric structured design -------------------------------------------------

def _spawn(seed, n):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def run_starts(fn, n_starts: int, seed, n_jobs: int = 1):
    """Run ``fn(index, rng)`` for every start; results ordered by start index."""
    rngs = _spawn(seed, n_starts)
    if n_jobs is None or n_jobs <= 1:
        return [fn(i, r) for i, r in enumerate(rngs)]
    with ThreadPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, range(n_starts), rngs))


def optimize_scf(geom: ArrayGeometry, target: DesignTarget, M: int, L: Optional[int] = None,
                 eta: float = 1.0, n_starts: int = 100, seed=0, optimizer_opts=None,
                 connectivity=None, init=None, n_jobs: int = 1) -> DesignResult:
    """Best-of-starts local minimization of the weighted SCF cost over phases.

    Each start draws uniform random phases (start ``i`` uses the i-th child of
    ``SeedSequence(seed)``) and runs L-BFGS-B with the analytic gradient
    (``optimizer_opts={'gradient': False}`` switches to Powell).  ``init``
    (a structured matrix) adds a deterministic extra start.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    opts = {"maxiter": 2000, "gradient": True, "ftol": 1e-12, "gtol": 1e-9}
    opts.update(optimizer_opts or {})
    L = M if L is None else L
    mask = np.ones((M, geom.n_elements), bool) if connectivity is None else np.asarray(connectivity, bool)
    scale = eta / np.sqrt(L)
    A = manifold_matrix(geom, target.grid)
    T = target.target
    W2 = target.weight**2

    def fun(x):
        return _phase_objective(x, mask, scale, A, T, W2)

    def solve(x0):
        try:
            if opts["gradient"]:
                res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                                        options={"maxiter": opts["maxiter"], "ftol": opts["ftol"],
                                                 "gtol": opts["gtol"]})
            else:
                res = optimize.minimize(lambda x: fun(x)[0], x0, method="Powell",
                                        options={"maxiter": opts["maxiter"], "xtol": 1e-8,
                                                 "ftol": opts["ftol"]})
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("SCF start failed: %s", exc)
            return None, np.inf, False
        return res.x, float(res.fun), bool(res.success)

    def one(i, rng):
        x0 = combiner.random_phases(M, geom.n_elements, rng)[mask]
        return solve(x0)

    outcomes = run_starts(one, n_starts, seed, n_jobs)
    if init is not None:
        x0 = init.phases().phases[mask]
        outcomes.append(solve(x0))
    costs = [c for _, c, _ in outcomes]
    if not np.any(np.isfinite(costs)):
        raise RuntimeError("all SCF optimization starts failed")
    best = int(np.argmin(costs))
    ph = np.zeros(mask.shape)
    ph[mask] = np.mod(outcomes[best][0], 2 * np.pi)
    mat = combiner.materialize(PhaseParametrization(ph, L, eta, mask))
    cost = weighted_scf_cost(mat, A, target)
    return DesignResult(mat, cost, len(outcomes), costs, [c for _, _, c in outcomes],
                        seed=seed, info={"best_start": best})
