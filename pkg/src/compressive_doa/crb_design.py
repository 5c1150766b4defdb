"""Combining-matrix design that minimizes the worst-case CRB under a false-detection limit.

The problem is

    min over phases   max over theta0   CRB(Phi, theta0)
    subject to        P_d(Phi, theta0, rho_th) <= epsilon0   for every theta0

solved in epigraph form with SLSQP over the free phases.  Both the CRB and the
union-bound P_d enter in log scale, which keeps the constraint informative
when P_d spans several decades.  Gradients are forward differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from . import combiner
from .combiner import CombiningMatrix, PhaseParametrization, as_array
from .false_detect import pd_curve
from .manifold import ArrayGeometry, AzimuthGrid
from .performance import NULL_TO_NULL, NoiseModel, crb_curve, crb_matrix, default_theta0_grid
from .scf_design import DesignResult, run_starts

log = logging.getLogger(__name__)

#: Absolute slack allowed on the Pd constraint when judging feasibility.
CONSTRAINT_TOL = 1e-3
_PD_FLOOR = 1e-12


@dataclass(frozen=True)
class CrbDesignSpec:
    """Inputs of :func:`optimize_crb`.

    ``rho_th`` is the linear SNR at which the Pd limit ``epsilon0`` must hold;
    the CRB objective is evaluated at the same SNR (its minimizer does not
    depend on it).  ``extra_sources`` holds weaker sources as
    ``(offset, amplitude_ratio)`` pairs relative to the reference DOA.

    The P_d limit is elastic: a slack ``s >= 0`` on ``log P_d <= log epsilon0``
    enters the objective as ``elastic_weight * s``.  Feasible problems end with
    ``s = 0``; infeasible ones value one unit of log-P_d excess like
    ``elastic_weight`` units of log-CRB.
    """

    geometry: ArrayGeometry
    M: int
    L: Optional[int] = None
    efficiency: float = 1.0
    rho_th: float = 1.0
    epsilon0: float = 0.05
    angular_range: Tuple[float, float] = (0.0, 2 * np.pi)
    theta0_grid_size: int = 90
    n_starts: int = 4
    seed: Optional[int] = 0
    init: Optional[CombiningMatrix] = field(default=None, repr=False)
    noise: NoiseModel = field(default_factory=NoiseModel)
    grid_size: int = 360
    quadrature_order: int = 64
    mainlobe_def: str = NULL_TO_NULL
    extra_sources: Tuple = ()
    connectivity: Optional[np.ndarray] = field(default=None, repr=False)
    maxiter: int = 60
    elastic_weight: float = 1.0

    def __post_init__(self):
        if not 0 < self.epsilon0 < 1:
            raise ValueError("epsilon0 must lie in (0, 1)")
        if not (np.isfinite(self.rho_th) and self.rho_th > 0):
            raise ValueError("rho_th must be a finite positive SNR")
        lo, hi = self.angular_range
        if not (0 <= lo < hi <= 2 * np.pi + 1e-12):
            raise ValueError("angular_range must be a nonempty interval inside (0, 2*pi]")
        if self.theta0_grid_size < 1:
            raise ValueError("theta0_grid_size must be >= 1")
        if self.n_starts < 0 or (self.n_starts == 0 and self.init is None):
            raise ValueError("need at least one start")
        if not self.elastic_weight > 0:
            raise ValueError("elastic_weight must be > 0")
        if self.M > self.geometry.n_elements:
            raise ValueError("M must not exceed the number of antennas")

    @property
    def branch_count(self) -> int:
        return self.M if self.L is None else self.L

    @property
    def thetas0(self) -> np.ndarray:
        lo, hi = self.angular_range
        return default_theta0_grid(self.theta0_grid_size, lo, hi)

    @property
    def mask(self) -> np.ndarray:
        if self.connectivity is None:
            return np.ones((self.M, self.geometry.n_elements), bool)
        return np.asarray(self.connectivity, bool)


@dataclass
class DesignEvaluation:
    worst_case_crb: float
    worst_case_pd: float
    thetas0: np.ndarray = field(repr=False)
    crb: np.ndarray = field(repr=False)
    pd: np.ndarray = field(repr=False)

    def table(self) -> list:
        """Rows ``(theta0, crb, pd)``."""
        return [(float(t), float(c), float(p)) for t, c, p in zip(self.thetas0, self.crb, self.pd)]


def _crb_values(W, spec: CrbDesignSpec, thetas0) -> np.ndarray:
    if not spec.extra_sources:
        return crb_curve(W, spec.geometry, thetas0, spec.rho_th, spec.noise)
    power = spec.rho_th * spec.noise.total
    amps = np.array([1.0] + [r for _, r in spec.extra_sources], complex)
    R_s = power * np.outer(amps, amps.conj())
    out = np.empty(len(thetas0))
    for k, t0 in enumerate(thetas0):
        doas = [t0] + [t0 + off for off, _ in spec.extra_sources]
        try:
            out[k] = crb_matrix(W, spec.geometry, doas, R_s, spec.noise)[0, 0]
        except ValueError:
            out[k] = np.inf
    return out


def _pd_values(W, spec: CrbDesignSpec, thetas0, G: int, clip: bool = True) -> np.ndarray:
    return pd_curve(W, spec.geometry, thetas0, spec.rho_th, spec.noise, G=G,
                    mainlobe_def=spec.mainlobe_def, grid=AzimuthGrid.uniform(spec.grid_size),
                    extra_sources=spec.extra_sources, clip=clip)


def evaluate_design(phi, spec: CrbDesignSpec, thetas0=None, G: int = 256) -> DesignEvaluation:
    """Worst-case CRB and union-bound P_d over the reference-DOA grid of ``spec``."""
    W = as_array(phi)
    thetas0 = spec.thetas0 if thetas0 is None else np.atleast_1d(np.asarray(thetas0, float))
    crb = _crb_values(W, spec, thetas0)
    pd = _pd_values(W, spec, thetas0, G)
    return DesignEvaluation(float(np.max(crb)), float(np.max(pd)), thetas0, crb, pd)


class _Problem:
    """Elastic epigraph problem over z = (phases, t, s); caches values per phase vector."""

    def __init__(self, spec: CrbDesignSpec, step: float = 1e-6):
        self.spec = spec
        self.mask = spec.mask
        self.scale = spec.efficiency / np.sqrt(spec.branch_count)
        self.thetas0 = spec.thetas0
        self.step = step
        self._key = None

    def matrix(self, x):
        W = np.zeros(self.mask.shape, complex)
        W[self.mask] = self.scale * np.exp(1j * x)
        return W

    def values(self, x):
        key = x.tobytes()
        if key != self._key:
            W = self.matrix(x)
            with np.errstate(divide="ignore"):
                lc = np.log(_crb_values(W, self.spec, self.thetas0))
                lp = np.log(_pd_values(W, self.spec, self.thetas0, self.spec.quadrature_order,
                                       clip=False) + _PD_FLOOR)
            lc = np.where(np.isfinite(lc), lc, 50.0)
            self._key, self._vals = key, (lc, lp)
        return self._vals

    def jacobians(self, x):
        lc0, lp0 = self.values(x)
        n = x.size
        Jc = np.empty((lc0.size, n))
        Jp = np.empty((lp0.size, n))
        for i in range(n):
            xi = x.copy()
            xi[i] += self.step
            W = self.matrix(xi)
            with np.errstate(divide="ignore"):
                lc = np.log(_crb_values(W, self.spec, self.thetas0))
                lp = np.log(_pd_values(W, self.spec, self.thetas0, self.spec.quadrature_order,
                                       clip=False) + _PD_FLOOR)
            lc = np.where(np.isfinite(lc), lc, 50.0)
            Jc[:, i] = (lc - lc0) / self.step
            Jp[:, i] = (lp - lp0) / self.step
        return Jc, Jp

    def solve(self, x0):
        log_eps = np.log(self.spec.epsilon0)
        n = x0.size
        cache = {}

        def jac(z):
            key = z[:n].tobytes()
            if cache.get("key") != key:
                cache["key"], cache["J"] = key, self.jacobians(z[:n])
            return cache["J"]

        def c_crb(z):
            return z[n] - self.values(z[:n])[0]

        def c_crb_jac(z):
            Jc, _ = jac(z)
            return np.hstack([-Jc, np.ones((Jc.shape[0], 1)), np.zeros((Jc.shape[0], 1))])

        def c_pd(z):
            return log_eps + z[n + 1] - self.values(z[:n])[1]

        def c_pd_jac(z):
            _, Jp = jac(z)
            return np.hstack([-Jp, np.zeros((Jp.shape[0], 1)), np.ones((Jp.shape[0], 1))])

        lc, lp = self.values(x0)
        z0 = np.concatenate([x0, [lc.max(), max(0.0, lp.max() - log_eps)]])
        w = self.spec.elastic_weight
        grad = np.zeros(n + 2)
        grad[n], grad[n + 1] = 1.0, w
        bounds = [(None, None)] * (n + 1) + [(0.0, None)]
        res = optimize.minimize(
            lambda z: z[n] + w * z[n + 1], z0, jac=lambda z: grad, method="SLSQP",
            bounds=bounds,
            constraints=[{"type": "ineq", "fun": c_crb, "jac": c_crb_jac},
                         {"type": "ineq", "fun": c_pd, "jac": c_pd_jac}],
            options={"maxiter": self.spec.maxiter, "ftol": 1e-6})
        return res.x[:n], bool(res.success)


def _materialize(x, spec: CrbDesignSpec) -> CombiningMatrix:
    ph = np.zeros(spec.mask.shape)
    ph[spec.mask] = np.mod(x, 2 * np.pi)
    return combiner.materialize(PhaseParametrization(ph, spec.branch_count, spec.efficiency,
                                                     spec.mask))


def optimize_crb(spec: CrbDesignSpec, n_jobs: int = 1) -> DesignResult:
    """Best-of-starts minimax CRB design under the P_d limit.

    Random starts use the children of ``SeedSequence(spec.seed)``; ``spec.init``
    adds one deterministic warm start.  Among feasible starts the lowest
    worst-case CRB wins; if none is feasible the start with the best elastic
    merit (see :class:`CrbDesignSpec`) is returned with ``feasible=False``.  Reported values are exact maxima with
    the default quadrature order.
    """
    problem = _Problem(spec)
    mask = spec.mask
    x0s = []
    if spec.init is not None:
        init = spec.init
        if init.shape != mask.shape or init.mode != combiner.STRUCTURED:
            raise ValueError("init must be a structured matrix of matching shape")
        x0s.append(init.phases().phases[mask])

    def one(i, rng):
        x0 = combiner.random_phases(spec.M, spec.geometry.n_elements, rng)[mask]
        return _run(_Problem(spec), x0, spec)

    outcomes = run_starts(one, spec.n_starts, spec.seed, n_jobs) if spec.n_starts else []
    outcomes += [_run(problem, x0, spec) for x0 in x0s]
    if not outcomes or all(o is None for o in outcomes):
        raise RuntimeError("all CRB design starts failed")
    evals = [o[1] if o else None for o in outcomes]
    feasible = [e is not None and e.worst_case_pd <= spec.epsilon0 + CONSTRAINT_TOL for e in evals]
    if any(feasible):
        keys = [e.worst_case_crb if f else np.inf for e, f in zip(evals, feasible)]
    else:
        keys = [_merit(e, spec) if e is not None else np.inf for e in evals]
        log.warning("no start met P_d <= %.3g; returning the design with the best "
                    "elastic merit", spec.epsilon0)
    best = int(np.argmin(keys))
    mat, ev, ok = outcomes[best]
    return DesignResult(
        mat, ev.worst_case_crb, len(outcomes),
        [e.worst_case_crb if e else np.inf for e in evals],
        [o[2] if o else False for o in outcomes],
        seed=spec.seed, feasible=bool(feasible[best]),
        info={"best_start": best, "worst_case_crb": ev.worst_case_crb,
              "worst_case_pd": ev.worst_case_pd, "epsilon0": spec.epsilon0,
              "rho_th": spec.rho_th,
              "start_worst_pd": [e.worst_case_pd if e else np.inf for e in evals]})


def _merit(ev: DesignEvaluation, spec: CrbDesignSpec) -> float:
    """``log CRB + w * max(0, log P_d - log epsilon0)``."""
    excess = max(0.0, np.log(ev.worst_case_pd + _PD_FLOOR) - np.log(spec.epsilon0))
    return float(np.log(ev.worst_case_crb) + spec.elastic_weight * excess)


def _run(problem: _Problem, x0, spec):
    try:
        x, ok = problem.solve(x0)
        mat = _materialize(x, spec)
        return mat, evaluate_design(mat, spec), ok
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("CRB design start failed: %s", exc)
        return None


def epsilon_sweep(spec: CrbDesignSpec, epsilons: Sequence[float], n_jobs: int = 1):
    """Designs for several P_d limits, tightest first.

    Each run is warm-started from the previous (tighter) design, so a looser
    limit can always fall back on a design that already met a tighter one.
    Returns ``[(epsilon0, DesignResult)]`` in the order given.
    """
    order = sorted(range(len(epsilons)), key=lambda i: epsilons[i])
    out = {}
    init, prev = spec.init, None
    for i in order:
        s = replace(spec, epsilon0=float(epsilons[i]), init=init)
        res = optimize_crb(s, n_jobs)
        if prev is not None and prev.feasible and prev.cost < res.cost:
            # the tighter design is feasible here too and strictly better
            ev = evaluate_design(prev.matrix, s)
            res = DesignResult(prev.matrix, ev.worst_case_crb, res.starts_used, res.start_costs,
                               res.converged, seed=spec.seed, feasible=True,
                               info={**res.info, "worst_case_crb": ev.worst_case_crb,
                                     "worst_case_pd": ev.worst_case_pd, "epsilon0": s.epsilon0,
                                     "inherited": True})
        out[i] = prev = res
        init = res.matrix
    return [(float(epsilons[i]), out[i]) for i in range(len(epsilons))]


def optimize_sidelobes(geom: ArrayGeometry, M: int, crb_target: float, init=None,
                       n_starts: int = 0, seed=0, snr: float = 1.0, thetas0=None,
                       noise: Optional[NoiseModel] = None, efficiency: float = 1.0,
                       maxiter: int = 300, n_jobs: int = 1) -> DesignResult:
    """Lowest mean sidelobe level subject to ``worst_crb <= crb_target``.

    The CRB bound enters as a quadratic penalty on the relative excess.  This
    traces the CRB/sidelobe trade-off of compressive designs and is the
    counterpart of the sparse baseline run with the same ``crb_target``.
    """
    from .performance import mean_sidelobe_level, worst_case_crb

    if init is None and n_starts < 1:
        raise ValueError("need an init matrix or at least one random start")
    thetas0 = default_theta0_grid(36) if thetas0 is None else np.atleast_1d(thetas0)
    noise = NoiseModel() if noise is None else noise
    N = geom.n_elements
    scale = efficiency / np.sqrt(M)

    def objective(x):
        W = scale * np.exp(1j * x.reshape(M, N))
        crb = worst_case_crb(W, geom, snr, thetas0, noise)
        if not np.isfinite(crb):
            return 10.0
        try:
            sl = mean_sidelobe_level(W, geom, thetas0)
        except ValueError:
            return 10.0
        return sl + 100.0 * max(0.0, crb / crb_target - 1.0) ** 2

    def solve(x0):
        res = optimize.minimize(objective, x0, method="L-BFGS-B",
                                options={"maxiter": maxiter, "eps": 1e-6})
        return res.x, float(res.fun), bool(res.success)

    outs = []
    if n_starts:
        outs = run_starts(lambda i, rng: solve(combiner.random_phases(M, N, rng).ravel()),
                          n_starts, seed, n_jobs)
    if init is not None:
        outs.append(solve(np.angle(as_array(init)).ravel()))
    costs = [c for _, c, _ in outs]
    best = int(np.argmin(costs))
    mat = combiner.structured_from_phases(np.mod(outs[best][0].reshape(M, N), 2 * np.pi),
                                          efficiency)
    crb = worst_case_crb(mat, geom, snr, thetas0, noise)
    sl = mean_sidelobe_level(mat, geom, thetas0)
    return DesignResult(mat, sl, len(outs), costs, [c for _, _, c in outs], seed=seed,
                        feasible=bool(crb <= crb_target * (1 + 1e-9)),
                        info={"worst_case_crb": crb, "mean_sidelobe": sl,
                              "crb_target": crb_target, "best_start": best})
