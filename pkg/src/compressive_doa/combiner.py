"""Analog combining matrices.

A combining matrix maps the N antenna outputs onto M receiver channels.  In
*structured* mode every connected entry has modulus ``eta / sqrt(L)`` and only
its phase is free; *unconstrained* mode holds arbitrary complex entries (used
for the closed-form SCF solution, which generally breaks the constant-modulus
hardware constraint).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

STRUCTURED = "structured"
UNCONSTRAINED = "unconstrained"


@dataclass(frozen=True)
class CombiningMatrix:
    weights: np.ndarray = field(repr=False)
    branch_count: int
    efficiency: float = 1.0
    connectivity: Optional[np.ndarray] = field(default=None, repr=False)
    mode: str = STRUCTURED

    def __post_init__(self):
        w = np.array(self.weights, dtype=complex, copy=True)
        if w.ndim != 2:
            raise ValueError("weights must be a 2-D matrix")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        conn = self.connectivity
        conn = np.ones(w.shape, bool) if conn is None else np.asarray(conn, bool)
        if conn.shape != w.shape:
            raise ValueError("connectivity mask must match the weight shape")
        conn = conn.copy()
        conn.setflags(write=False)
        object.__setattr__(self, "connectivity", conn)
        if self.mode not in (STRUCTURED, UNCONSTRAINED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == STRUCTURED:
            if np.any(w[~conn] != 0):
                raise ValueError("disconnected entries must be zero")
            if np.any(conn.sum(axis=0) != self.branch_count):
                raise ValueError("each column needs exactly L connected entries")
            mod = self.efficiency / np.sqrt(self.branch_count)
            if not np.allclose(np.abs(w[conn]), mod, rtol=1e-9, atol=0):
                raise ValueError("connected entries must have modulus eta/sqrt(L)")

    @property
    def shape(self):
        return self.weights.shape

    @property
    def M(self) -> int:
        return self.weights.shape[0]

    @property
    def N(self) -> int:
        return self.weights.shape[1]

    def phases(self) -> "PhaseParametrization":
        """Recover the phase parametrization of a structured matrix."""
        if self.mode != STRUCTURED:
            raise ValueError("only structured matrices have a phase parametrization")
        ph = np.where(self.connectivity, np.mod(np.angle(self.weights), 2 * np.pi), 0.0)
        return PhaseParametrization(ph, self.branch_count, self.efficiency, self.connectivity)

    def rotated(self, alpha: float) -> "CombiningMatrix":
        """Copy with a global phase factor exp(j alpha)."""
        return CombiningMatrix(
            self.weights * np.exp(1j * alpha), self.branch_count, self.efficiency,
            self.connectivity, self.mode,
        )


def as_array(phi) -> np.ndarray:
    """Weights of a :class:`CombiningMatrix`, or the input as a complex array."""
    if isinstance(phi, CombiningMatrix):
        return phi.weights
    return np.asarray(phi, dtype=complex)


def unconstrained(weights) -> CombiningMatrix:
    w = np.asarray(weights, dtype=complex)
    return CombiningMatrix(w, w.shape[0], 1.0, None, UNCONSTRAINED)


@dataclass(frozen=True)
class PhaseParametrization:
    phases: np.ndarray
    branch_count: int
    efficiency: float = 1.0
    connectivity: Optional[np.ndarray] = None

    @property
    def mask(self) -> np.ndarray:
        if self.connectivity is None:
            return np.ones(np.shape(self.phases), bool)
        return np.asarray(self.connectivity, bool)


def materialize(p: PhaseParametrization) -> CombiningMatrix:
    """Build the structured matrix ``(eta/sqrt(L)) exp(j phi)`` on connected entries."""
    ph = np.asarray(p.phases, dtype=float)
    if ph.ndim != 2:
        raise ValueError("phases must be a 2-D matrix")
    if not np.all(np.isfinite(ph)):
        raise ValueError("phases must be finite")
    M = ph.shape[0]
    if not 1 <= p.branch_count <= M:
        raise ValueError(f"branch count L={p.branch_count} must satisfy 1 <= L <= M={M}")
    if not 0 < p.efficiency <= 1:
        raise ValueError("efficiency must lie in (0, 1]")
    mask = p.mask
    w = np.where(mask, p.efficiency / np.sqrt(p.branch_count) * np.exp(1j * ph), 0)
    return CombiningMatrix(w, p.branch_count, p.efficiency, mask, STRUCTURED)


def structured_from_phases(phases, efficiency: float = 1.0, branch_count=None,
                           connectivity=None) -> CombiningMatrix:
    ph = np.asarray(phases, dtype=float)
    L = ph.shape[0] if branch_count is None else branch_count
    return materialize(PhaseParametrization(ph, L, efficiency, connectivity))


def random_phases(M: int, N: int, rng) -> np.ndarray:
    """Phases drawn uniformly from (0, 2*pi]."""
    return 2 * np.pi * (1.0 - rng.random((M, N)))


def random_kernel(M: int, N: int, seed=None, efficiency: float = 1.0,
                  branch_count=None, connectivity=None) -> CombiningMatrix:
    """Fully meshed (by default) combining matrix with i.i.d. uniform phases."""
    if M > N:
        raise ValueError("M must not exceed N")
    rng = np.random.default_rng(seed)
    return structured_from_phases(random_phases(M, N, rng), efficiency, branch_count,
                                  connectivity)


def random_kernels(M: int, N: int, count: int, seed=None, efficiency: float = 1.0):
    """``count`` independent random kernels, reproducible from one seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [random_kernel(M, N, np.random.default_rng(c), efficiency) for c in children]


def sparse_connectivity(M: int, N: int, L: int, offset: int = 0) -> np.ndarray:
    """Cyclic mask with L consecutive channels connected to each antenna."""
    if not 1 <= L <= M:
        raise ValueError("need 1 <= L <= M")
    mask = np.zeros((M, N), bool)
    for n in range(N):
        for k in range(L):
            mask[(n + offset + k) % M, n] = True
    return mask


def effective_manifold(phi, A: np.ndarray) -> np.ndarray:
    """Effective manifold ``Phi @ A`` seen after combining."""
    W = as_array(phi)
    A = np.asarray(A)
    if W.shape[1] != A.shape[0]:
        raise ValueError(f"shape mismatch: Phi is {W.shape}, A is {A.shape}")
    return W @ A


# -- text serialization --------------------------------------------------------

def dumps(phi: CombiningMatrix) -> str:
    """Text form: header ``M N L eta mode`` then one row per line of ``re,im`` pairs."""
    lines = [f"{phi.M} {phi.N} {phi.branch_count} {phi.efficiency!r} {phi.mode}"]
    for row in phi.weights:
        lines.append(" ".join(f"{z.real:.17g},{z.imag:.17g}" for z in row))
    return "\n".join(lines) + "\n"


def loads(text: str) -> CombiningMatrix:
    rows = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = rows[0].split()
    if len(head) != 5:
        raise ValueError("header must read 'M N L eta mode'")
    M, N, L = int(head[0]), int(head[1]), int(head[2])
    eta, mode = float(head[3]), head[4]
    if len(rows) - 1 != M:
        raise ValueError(f"expected {M} rows, got {len(rows) - 1}")
    w = np.empty((M, N), complex)
    for m, ln in enumerate(rows[1:]):
        items = ln.split()
        if len(items) != N:
            raise ValueError(f"row {m} has {len(items)} entries, expected {N}")
        for n, it in enumerate(items):
            re, im = it.split(",")
            w[m, n] = complex(float(re), float(im))
    conn = w != 0 if mode == STRUCTURED else None
    return CombiningMatrix(w, L, eta, conn, mode)


def save(phi: CombiningMatrix, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(phi))


def load(path) -> CombiningMatrix:
    with open(path) as fh:
        return loads(fh.read())
