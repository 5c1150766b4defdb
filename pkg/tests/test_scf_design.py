import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from compressive_doa import combiner
from compressive_doa import scf_design as sd
from compressive_doa.manifold import ArrayGeometry, AzimuthGrid, manifold_matrix


def random_hermitian(n, rng):
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (Z + Z.conj().T) / 2


def test_eckart_young_identity_manifold():
    # A = I: the best rank-2 PSD fit of diag(4, 3, 2, 1) leaves 2^2 + 1^2
    res = sd.closed_form_design(np.eye(4), np.diag([4.0, 3.0, 2.0, 1.0]), 2)
    assert res.cost == pytest.approx(5.0, abs=1e-12)
    assert not res.heuristic and not res.clamped
    np.testing.assert_allclose(res.matrix.weights.conj().T @ res.matrix.weights,
                               np.diag([4.0, 3.0, 0, 0]), atol=1e-12)


def test_negative_eigenvalues_are_clamped():
    res = sd.closed_form_design(np.eye(3), np.diag([2.0, -1.0, -3.0]), 2)
    assert res.clamped
    assert res.cost == pytest.approx(1.0 + 9.0)


def test_closed_form_is_deterministic():
    rng = np.random.default_rng(0)
    A = manifold_matrix(ArrayGeometry.ula(5), AzimuthGrid.uniform_spatial_frequency(10))
    T = random_hermitian(10, rng)
    a = sd.closed_form_design(A, T, 3).matrix.weights
    b = sd.closed_form_design(A, T, 3).matrix.weights
    assert np.array_equal(a, b)


def test_non_orthogonal_manifold_warns():
    A = manifold_matrix(ArrayGeometry.uca(5, 0.4), AzimuthGrid.uniform(12))
    with pytest.warns(RuntimeWarning):
        res = sd.closed_form_design(A, np.eye(12), 3)
    assert res.heuristic


def test_closed_form_with_scaled_orthogonal_manifold_beats_numeric():
    # A A^H = C I with C = P != 1 checks the 1/C^2 scaling of the closed form
    rng = np.random.default_rng(5)
    A = manifold_matrix(ArrayGeometry.ula(4), AzimuthGrid.uniform_spatial_frequency(8))
    T = random_hermitian(8, rng)
    cf = sd.closed_form_design(A, T, 2)
    num = sd.optimize_unconstrained(A, T, 2, n_starts=10, seed=1)
    assert num.cost >= cf.cost - 1e-8 * (1 + cf.cost)
    assert num.cost == pytest.approx(cf.cost, rel=1e-6, abs=1e-8)


@given(st.integers(0, 2**31))
def test_row_orthogonal_matrices_are_optimal(seed):
    rng = np.random.default_rng(seed)
    N, P, M = 4, 8, 2
    A = manifold_matrix(ArrayGeometry.ula(N), AzimuthGrid.uniform_spatial_frequency(P))
    T = P * np.eye(P)
    best = sd.closed_form_design(A, T, M).cost
    phi = sd.row_orthogonal_matrix(M, N, 1.0, rng)
    np.testing.assert_allclose(phi @ phi.conj().T, np.eye(M), atol=1e-12)
    assert sd.weighted_scf_cost(phi, A, T) == pytest.approx(best, rel=1e-9)


def test_cost_matches_definition(kernel95):
    A = manifold_matrix(ArrayGeometry.uca(9, 0.65), AzimuthGrid.uniform(20))
    T = np.eye(20)
    W = np.abs(np.random.default_rng(1).standard_normal((20, 20)))
    W = W + W.T
    B = kernel95.weights @ A
    E = B.conj().T @ B - T
    assert sd.weighted_scf_cost(kernel95, A, T, W) == pytest.approx(np.sum(W**2 * np.abs(E) ** 2))
    assert sd.weighted_scf_cost(kernel95, A, T) == pytest.approx(np.linalg.norm(E) ** 2)


def test_target_validation():
    g = AzimuthGrid.uniform(4)
    with pytest.raises(ValueError):
        sd.DesignTarget(g, np.triu(np.ones((4, 4))))
    with pytest.raises(ValueError):
        sd.DesignTarget(g, np.eye(4), -np.ones((4, 4)))
    with pytest.raises(ValueError):
        sd.DesignTarget(g, np.eye(3))


@given(st.integers(0, 2**31))
def test_phase_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    geom = ArrayGeometry.uca(5, 0.5)
    grid = AzimuthGrid.uniform(16)
    A = manifold_matrix(geom, grid)
    W = np.abs(rng.standard_normal((16, 16)))
    tgt = sd.DesignTarget(grid, random_hermitian(16, rng), W + W.T)
    p = combiner.PhaseParametrization(rng.uniform(0, 2 * np.pi, (3, 5)), 3, 0.8)
    g = sd.phase_gradient(p, A, tgt)
    h = 1e-6
    for (m, n) in [(0, 0), (1, 3), (2, 4)]:
        ph_p, ph_m = p.phases.copy(), p.phases.copy()
        ph_p[m, n] += h
        ph_m[m, n] -= h
        cp = sd.weighted_scf_cost(combiner.structured_from_phases(ph_p, 0.8), A, tgt)
        cm = sd.weighted_scf_cost(combiner.structured_from_phases(ph_m, 0.8), A, tgt)
        assert g[m, n] == pytest.approx((cp - cm) / (2 * h), rel=1e-5, abs=1e-5)


def test_cost_invariant_under_global_phase(kernel95):
    A = manifold_matrix(ArrayGeometry.uca(9, 0.65), AzimuthGrid.uniform(30))
    T = sd.reference_target(ArrayGeometry.uca(5, 0.65), AzimuthGrid.uniform(30), 9.0)
    c0 = sd.weighted_scf_cost(kernel95, A, T)
    assert sd.weighted_scf_cost(kernel95.rotated(1.1), A, T) == pytest.approx(c0, rel=1e-12)


def test_reference_target_gain():
    grid = AzimuthGrid.uniform(24)
    T = sd.reference_target(ArrayGeometry.uca(5, 0.65), grid, gain=9.0)
    np.testing.assert_allclose(np.diag(T).real, 9.0)
    np.testing.assert_allclose(T, T.conj().T)


def test_block_weights():
    grid = AzimuthGrid.uniform(36)
    W = sd.block_weights(grid, 0.2, 0.2, 2.0, 0.0, 1.0)
    assert W[0, 0] == 2.0 and W[0, 18] == 1.0 and W[0, 2] == 0.0
    np.testing.assert_array_equal(W, W.T)


@pytest.fixture(scope="module")
def small_problem():
    geom = ArrayGeometry.uca(6, 0.5)
    grid = AzimuthGrid.uniform(36)
    tgt = sd.DesignTarget(grid, sd.reference_target(ArrayGeometry.uca(3, 0.5), grid, 6.0))
    return geom, tgt


def test_optimize_scf_best_of_starts(small_problem):
    geom, tgt = small_problem
    res = sd.optimize_scf(geom, tgt, 3, n_starts=4, seed=3)
    assert res.starts_used == 4
    assert res.cost == pytest.approx(min(res.start_costs), rel=1e-9)
    assert res.matrix.mode == combiner.STRUCTURED
    np.testing.assert_allclose(np.abs(res.matrix.weights), 1 / np.sqrt(3))


def test_optimize_scf_reproducible_and_thread_independent(small_problem):
    geom, tgt = small_problem
    a = sd.optimize_scf(geom, tgt, 3, n_starts=3, seed=9)
    b = sd.optimize_scf(geom, tgt, 3, n_starts=3, seed=9, n_jobs=3)
    assert np.array_equal(a.matrix.weights, b.matrix.weights)
    assert a.start_costs == b.start_costs


def test_optimize_scf_warm_start_is_a_candidate(small_problem):
    geom, tgt = small_problem
    first = sd.optimize_scf(geom, tgt, 3, n_starts=2, seed=0)
    again = sd.optimize_scf(geom, tgt, 3, n_starts=1, seed=100, init=first.matrix)
    assert again.starts_used == 2
    assert again.cost <= first.cost * (1 + 1e-9)


def test_optimize_scf_gradient_free_path(small_problem):
    geom, tgt = small_problem
    res = sd.optimize_scf(geom, tgt, 3, n_starts=1, seed=0,
                          optimizer_opts={"gradient": False, "maxiter": 200})
    assert np.isfinite(res.cost)


def test_optimized_design_beats_random_kernels(small_problem):
    geom, tgt = small_problem
    res = sd.optimize_scf(geom, tgt, 3, n_starts=3, seed=1)
    A = manifold_matrix(geom, tgt.grid)
    rand = [sd.weighted_scf_cost(k, A, tgt) for k in combiner.random_kernels(3, 6, 20, seed=2)]
    assert res.cost < min(rand)


def test_design_result_save(tmp_path, small_problem):
    geom, tgt = small_problem
    res = sd.optimize_scf(geom, tgt, 3, n_starts=1, seed=0)
    res.save(tmp_path / "d.txt")
    assert np.array_equal(combiner.load(tmp_path / "d.txt").weights, res.matrix.weights)
    import json
    meta = json.loads((tmp_path / "d.txt.json").read_text())
    assert meta["starts_used"] == 1 and meta["cost"] == res.cost
