import numpy as np
import pytest
from hypothesis import given, strategies as st

from compressive_doa import false_detect as fd
from compressive_doa.manifold import ArrayGeometry, steering_vector
from compressive_doa.performance import NoiseModel, default_theta0_grid

lam_st = st.floats(0.1, 5.0)
nc_st = st.floats(0.0, 6.0)


def mixed_spec(lp, ln, cp, cn):
    return fd.QuadraticFormSpec([lp, -ln], [cp, cn])


@given(lam_st, lam_st, nc_st, nc_st)
def test_mgf_is_one_at_origin(lp, ln, cp, cn):
    assert fd.mgf(mixed_spec(lp, ln, cp, cn), 0.0) == pytest.approx(1.0)


def test_mgf_of_central_exponential():
    # |z|^2 with z ~ CN(0, 1) is Exp(1): E exp(sX) = 1 / (1 - s)
    spec = fd.QuadraticFormSpec([1.0], [0.0])
    for s in (-2.0, 0.3, 0.5j):
        assert fd.mgf(spec, s) == pytest.approx(1 / (1 - s))


@given(lam_st, lam_st, nc_st, nc_st)
def test_mgf_moments_match_definition(lp, ln, cp, cn):
    spec = mixed_spec(lp, ln, cp, cn)
    h = 1e-5
    m1 = (fd.mgf(spec, h) - fd.mgf(spec, -h)).real / (2 * h)
    m2 = (fd.mgf(spec, h) - 2 + fd.mgf(spec, -h)).real / h**2
    lam = np.array([lp, -ln])
    nc = np.array([cp, cn])
    mean = np.sum(lam * (1 + nc))
    var = np.sum(lam**2 * (1 + 2 * nc))
    assert m1 == pytest.approx(mean, rel=1e-6, abs=1e-6)
    assert m2 == pytest.approx(var + mean**2, rel=1e-4, abs=1e-4)
    assert spec.mean() == pytest.approx(mean)


def test_mgf_moments_match_sampling():
    spec = fd.QuadraticFormSpec([1.5, -0.7], [2.0, 0.5])
    x = spec.sample(400_000, np.random.default_rng(0))
    assert x.mean() == pytest.approx(spec.mean(), abs=0.02)
    assert x.var() == pytest.approx(1.5**2 * 5 + 0.7**2 * 2, rel=0.02)


@given(lam_st, lam_st, nc_st, nc_st)
def test_saddle_point_is_a_stationary_minimum_inside_bracket(lp, ln, cp, cn):
    spec = mixed_spec(lp, ln, cp, cn)
    u = fd.saddle_point(spec)
    assert 0 < u < 1 / ln
    f1, f2 = fd.saddle_derivatives(spec, u)
    assert abs(f1) * u < 1e-9
    assert f2 > 0


def test_saddle_needs_negative_eigenvalue():
    with pytest.raises(ValueError):
        fd.saddle_point(fd.QuadraticFormSpec([1.0, 2.0], [0.0, 0.0]))


@pytest.mark.parametrize("lam,nc", [
    ([1.0, -1.0], [0.0, 0.0]),
    ([2.0, -0.5], [3.0, 0.1]),
    ([0.3, -1.7], [4.0, 0.0]),
    ([1.0, -0.2], [0.0, 5.0]),
])
def test_pq_matches_monte_carlo(lam, nc):
    spec = fd.QuadraticFormSpec(lam, nc)
    x = spec.sample(400_000, np.random.default_rng(1))
    emp = np.mean(x < 0)
    se = np.sqrt(emp * (1 - emp) / x.size)
    assert fd.pq(spec) == pytest.approx(emp, abs=4 * se + 1e-4)


def test_symmetric_central_form_is_one_half():
    assert fd.pq(fd.QuadraticFormSpec([1.0, -1.0], [0.0, 0.0])) == pytest.approx(0.5, abs=1e-10)


def test_degenerate_forms():
    assert fd.pq(fd.QuadraticFormSpec([], [])) == 0.5
    assert fd.pq(fd.QuadraticFormSpec([1.0], [2.0])) == 0.0
    assert fd.pq(fd.QuadraticFormSpec([-1.0], [2.0])) == 1.0


def test_spec_validation():
    with pytest.raises(ValueError):
        fd.QuadraticFormSpec([1.0, -1.0, 2.0], [0, 0, 0])
    with pytest.raises(ValueError):
        fd.QuadraticFormSpec([1.0], [-0.1])
    with pytest.raises(ValueError):
        fd.QuadraticFormSpec([1.0, 2.0], [0.0])


@given(lam_st, lam_st, nc_st, nc_st)
def test_quadrature_converges(lp, ln, cp, cn):
    spec = mixed_spec(lp, ln, cp, cn)
    assert abs(fd.pq(spec, 256) - fd.pq(spec, 1024)) <= 1e-5


def test_quadrature_converges_at_design_operating_points(opt_crb, uca9):
    th = default_theta0_grid(18)
    for snr in (0.3, 1.0, 10.0):
        a = fd.pd_curve(opt_crb, uca9, th, snr, G=64, clip=False)
        b = fd.pd_curve(opt_crb, uca9, th, snr, G=512, clip=False)
        assert np.max(np.abs(a - b)) <= 1e-6


@given(st.floats(0.0, 4.0), st.floats(0.01, 3.0))
def test_pq_decreases_with_mean_on_positive_axis(c, dc):
    a = fd.pq(fd.QuadraticFormSpec([1.0, -0.6], [c, 0.2]))
    b = fd.pq(fd.QuadraticFormSpec([1.0, -0.6], [c + dc, 0.2]))
    assert b <= a + 1e-12


def test_two_orthogonal_steering_vectors_give_unit_eigenvalues():
    # unit, orthogonal a0 and aq with white noise: lam = +-1
    geom = ArrayGeometry.ula(4)
    phi = np.eye(4)
    # cos(theta) spaced by 2/N gives orthogonal ULA steering vectors
    t0, tq = np.pi / 2, np.arccos(0.5)
    a0 = steering_vector(geom, t0)
    aq = steering_vector(geom, tq)
    assert abs(np.vdot(a0, aq)) < 1e-12
    spec = fd.build_quadratic_spec(phi, geom, t0, tq)
    np.testing.assert_allclose(spec.eigenvalues, [1.0, -1.0], atol=1e-12)
    # |a0^H r|^2 / ||a0||^2 with r = a0: noncentrality N on the positive axis
    np.testing.assert_allclose(spec.noncentrality, [4.0, 0.0], atol=1e-10)


@given(st.integers(0, 2**31), st.floats(0.0, 2 * np.pi), st.floats(0.3, 3.0))
def test_eigenvalues_satisfy_trace_identity(seed, t0, dq):
    # eigenvalues of R^{1/2}(a0 a0^H - aq aq^H)R^{1/2} sum to a0^H R a0 - aq^H R aq
    from compressive_doa.combiner import random_kernel
    geom = ArrayGeometry.uca(9, 0.65)
    phi = random_kernel(5, 9, seed=seed)
    noise = NoiseModel(1.0, 0.4)
    spec = fd.build_quadratic_spec(phi, geom, t0, t0 + dq, noise=noise)
    R = noise.covariance(phi)
    W = phi.weights
    a0 = W @ steering_vector(geom, t0)
    aq = W @ steering_vector(geom, t0 + dq)
    a0 /= np.linalg.norm(a0)
    aq /= np.linalg.norm(aq)
    tr = np.vdot(a0, R @ a0).real - np.vdot(aq, R @ aq).real
    assert spec.eigenvalues.sum() == pytest.approx(tr, rel=1e-9, abs=1e-12)


def test_union_bound_dominates_every_term(opt_crb, uca9):
    rep = fd.union_bound_pd(opt_crb, uca9, 1.0, snr=1.0)
    assert rep.per_sidelobe
    assert rep.union_bound >= max(p for _, _, p in rep.per_sidelobe) - 1e-15
    assert rep.union_bound == pytest.approx(min(1.0, sum(p for _, _, p in rep.per_sidelobe)))


def test_pd_curve_matches_scalar_route(opt_crb, uca9):
    th = default_theta0_grid(6)
    curve = fd.pd_curve(opt_crb, uca9, th, 1.0)
    scalar = [fd.union_bound_pd(opt_crb, uca9, t, snr=1.0).union_bound for t in th]
    np.testing.assert_allclose(curve, scalar, rtol=1e-9, atol=1e-12)
    raw = fd.pd_curve(opt_crb, uca9, th, 1.0, clip=False)
    assert np.all(raw >= curve - 1e-15)


def test_pd_is_invariant_under_global_phase(opt_crb, uca9):
    th = default_theta0_grid(6)
    np.testing.assert_allclose(fd.pd_curve(opt_crb, uca9, th, 2.0),
                               fd.pd_curve(opt_crb.rotated(0.9), uca9, th, 2.0), atol=1e-12)


def test_pd_decreases_with_snr(opt_crb, uca9):
    th = default_theta0_grid(12)
    means = [fd.pd_curve(opt_crb, uca9, th, 10 ** (d / 10)).mean() for d in (-5, 0, 5, 10)]
    assert all(b < a for a, b in zip(means, means[1:]))


def test_two_source_union_bound(opt_crb, uca9):
    s0 = np.sqrt(10 ** 1.2)
    rep = fd.union_bound_pd(opt_crb, uca9, 1.0, sources=[(1.0, s0), (1.2, s0 * 10 ** (-0.3))])
    curve = fd.pd_curve(opt_crb, uca9, [1.0], 10 ** 1.2, extra_sources=[(0.2, 10 ** (-0.3))])
    assert rep.union_bound == pytest.approx(curve[0], rel=1e-6, abs=1e-12)
