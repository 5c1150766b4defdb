import numpy as np
import pytest
from hypothesis import given, strategies as st

from compressive_doa import combiner
from compressive_doa import performance as perf
from compressive_doa.manifold import ArrayGeometry, AzimuthGrid, steering_vector


def crb_by_fisher_fd(W, geom, theta, power, noise, h=1e-6):
    """CRB from the full (theta, Re s, Im s) Fisher matrix with finite-difference
    derivatives of the snapshot mean."""
    s = np.sqrt(power)
    R = noise.covariance(W)
    Ri = np.linalg.inv(R)

    def mean(t):
        return W @ steering_vector(geom, t) * s

    d_theta = (mean(theta + h) - mean(theta - h)) / (2 * h)
    a = W @ steering_vector(geom, theta)
    D = np.column_stack([d_theta, a, 1j * a])
    J = 2 * np.real(D.conj().T @ Ri @ D)
    return np.linalg.inv(J)[0, 0]


@given(st.integers(0, 2**31), st.floats(0.0, 2 * np.pi), st.floats(0.1, 10.0))
def test_crb_matches_fisher_finite_differences(seed, theta, snr):
    geom = ArrayGeometry.uca(9, 0.65)
    phi = combiner.random_kernel(5, 9, seed=seed, efficiency=0.8)
    noise = perf.NoiseModel(1.0, 0.3)
    ref = crb_by_fisher_fd(phi.weights, geom, theta, snr * noise.total, noise)
    assert perf.crb_single(phi, geom, theta, snr, noise) == pytest.approx(ref, rel=1e-5)


def test_crb_scales_inversely_with_snr(kernel95):
    geom = ArrayGeometry.uca(9, 0.65)
    c1 = perf.crb_single(kernel95, geom, 0.4, 1.0)
    assert perf.crb_single(kernel95, geom, 0.4, 10.0) == pytest.approx(c1 / 10, rel=1e-12)


def test_crb_matrix_single_source_matches_scalar(kernel95):
    geom = ArrayGeometry.uca(9, 0.65)
    noise = perf.NoiseModel(1.0, 0.5)
    power = 2.0 * noise.total
    C = perf.crb_matrix(kernel95, geom, [1.3], [[power]], noise)
    assert C[0, 0] == pytest.approx(perf.crb_single(kernel95, geom, 1.3, 2.0, noise), rel=1e-10)


def test_crb_matrix_rejects_coherent_duplicates(kernel95):
    geom = ArrayGeometry.uca(9, 0.65)
    with pytest.raises(ValueError):
        perf.crb_matrix(kernel95, geom, [0.5, 0.5], np.eye(2))


def test_crb_invariant_under_global_phase(kernel95):
    geom = ArrayGeometry.uca(9, 0.65)
    th = perf.default_theta0_grid(12)
    a = perf.crb_curve(kernel95, geom, th, 1.0)
    b = perf.crb_curve(kernel95.rotated(2.0), geom, th, 1.0)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_full_uca_crb_is_direction_independent(uca9):
    c = perf.crb_curve(np.eye(9), uca9, np.linspace(0, 2 * np.pi, 37), 1.0)
    np.testing.assert_allclose(c, c[0], rtol=1e-10)


def test_crb_rejects_bad_rho(kernel95, uca9):
    with pytest.raises(ValueError):
        perf.crb_single(kernel95, uca9, 0.0, 0.0)


def test_blind_spot_is_not_identifiable(uca9):
    # a single row orthogonal to a(theta) and its derivative leaves F = 0
    a = steering_vector(uca9, 0.7)
    d = (steering_vector(uca9, 0.7 + 1e-7) - steering_vector(uca9, 0.7 - 1e-7)) / 2e-7
    Q, _ = np.linalg.qr(np.column_stack([a, d, np.eye(9)[:, :1]]))
    row = Q[:, 2].conj()[None, :]
    with pytest.raises(ValueError):
        perf.crb_single(row, uca9, 0.7, 1.0)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        perf.NoiseModel(0.0, 0.0)
    with pytest.raises(ValueError):
        perf.NoiseModel(-1.0, 0.0)
    assert perf.NoiseModel(2.0, 1.0).beta == 0.5


def test_full_array_profile(uca9):
    t0 = np.deg2rad(60)
    prof = perf.correlation_profile(np.eye(9), uca9, t0)
    assert prof.values.max() == pytest.approx(1.0)
    assert prof.grid[np.argmax(prof.values)] == pytest.approx(t0)
    assert prof.mainlobe[0] < t0 < prof.mainlobe[1]
    assert all(0 <= h <= 1 for _, h in prof.peaks)
    heights = [h for _, h in prof.peaks]
    assert heights == sorted(heights, reverse=True)
    for t, _ in prof.peaks:
        assert not prof.mainlobe[0] <= t <= prof.mainlobe[1]


def test_three_db_mainlobe_is_narrower(uca9):
    a = perf.correlation_profile(np.eye(9), uca9, 2.0)
    b = perf.correlation_profile(np.eye(9), uca9, 2.0, mainlobe_def=perf.THREE_DB)
    assert (b.mainlobe[1] - b.mainlobe[0]) < (a.mainlobe[1] - a.mainlobe[0])


def test_normalized_correlation_peaks_at_reference(kernel95, uca9):
    b = perf.normalized_correlation(kernel95, uca9, [0.3, 2.0], np.linspace(0, 2 * np.pi, 181))
    assert b.shape == (181, 2)
    assert np.all(b <= 1 + 1e-12)


def test_mean_sidelobe_is_rotation_invariant_for_uca(uca9):
    # cyclic symmetry of a full UCA
    th = perf.default_theta0_grid(9)
    v = [perf.mean_sidelobe_level(np.eye(9), uca9, [t]) for t in th]
    np.testing.assert_allclose(v, v[0], atol=1e-3)


def test_snr_ratio_example_and_limits():
    assert perf.snr_ratio(9, 5, 1.0, perf.NoiseModel(1.0, 1.0)) == pytest.approx(9 / 7, rel=1e-12)
    assert perf.snr_ratio(9, 7, 1.0, perf.NoiseModel(1e-12, 1.0)) == pytest.approx(9 / 7, rel=1e-9)
    assert perf.snr_ratio(9, 5, 0.8, perf.NoiseModel(1.0, 1e-8)) == pytest.approx(1.0, rel=1e-6)
    assert perf.snr_ratio(9, 5, 0.8, perf.NoiseModel(1e-8, 1.0)) == pytest.approx(5.76 / 5, rel=1e-6)
    with pytest.raises(ValueError):
        perf.snr_ratio(5, 9, 1.0, perf.NoiseModel())


@given(st.floats(0.05, 20.0), st.floats(0.05, 20.0))
def test_snr_ratio_is_between_limits(s1, s2):
    r = perf.snr_ratio(9, 5, 0.8, perf.NoiseModel(s1, s2))
    assert 1.0 - 1e-12 <= r <= 5.76 / 5 + 1e-12


def test_default_theta0_grid():
    g = perf.default_theta0_grid(4)
    np.testing.assert_allclose(g, [np.pi / 2, np.pi, 3 * np.pi / 2, 2 * np.pi])


@pytest.mark.slow
def test_sparse_array_design_small():
    res = perf.design_sparse_array(4, 0.5, 0.5, n_starts=2, seed=0, maxiter=150,
                                   thetas0=perf.default_theta0_grid(8),
                                   grid=AzimuthGrid.uniform(90))
    pos = res.geometry.positions
    assert pos.shape == (4, 2)
    assert np.all(np.hypot(pos[:, 0], pos[:, 1]) <= 0.5 + 1e-12)
    assert np.isfinite(res.worst_crb)
    assert res.objective == pytest.approx(min(res.start_objectives))
