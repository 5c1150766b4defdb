import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from compressive_doa import combiner
from compressive_doa.combiner import (PhaseParametrization, materialize, random_kernel,
                                      sparse_connectivity, structured_from_phases)
from compressive_doa.manifold import ArrayGeometry, steering_matrix


@given(st.integers(1, 6), st.integers(0, 6), st.floats(0.05, 1.0), st.integers(0, 2**31))
def test_fully_meshed_frobenius_norm(M, extra, eta, seed):
    N = M + extra
    phi = random_kernel(M, N, seed, eta)
    assert np.linalg.norm(phi.weights) ** 2 == pytest.approx(eta**2 * N, rel=1e-12)
    np.testing.assert_allclose(np.abs(phi.weights), eta / np.sqrt(M), rtol=1e-12)


def test_frobenius_example():
    phi = random_kernel(5, 9, 0, efficiency=0.8)
    assert np.linalg.norm(phi.weights) ** 2 == pytest.approx(5.76)


@given(st.data())
def test_sparse_connectivity_frobenius(data):
    M = data.draw(st.integers(1, 5))
    L = data.draw(st.integers(1, M))
    N = 7
    mask = sparse_connectivity(M, N, L)
    assert np.all(mask.sum(axis=0) == L)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    phi = materialize(PhaseParametrization(rng.uniform(0, 6, (M, N)), L, 0.9, mask))
    assert np.linalg.norm(phi.weights) ** 2 == pytest.approx(0.81 * N)
    assert np.all(phi.weights[~mask] == 0)


def test_structured_validation_errors():
    with pytest.raises(ValueError):
        structured_from_phases(np.zeros((3, 4)), branch_count=4)
    with pytest.raises(ValueError):
        structured_from_phases(np.zeros((3, 4)), efficiency=1.5)
    with pytest.raises(ValueError):
        structured_from_phases(np.zeros((3, 4)), efficiency=0.0)
    with pytest.raises(ValueError):
        structured_from_phases(np.array([[0.0, np.inf]]))
    with pytest.raises(ValueError):
        combiner.CombiningMatrix(np.ones((2, 2)), 2)  # wrong modulus


def test_phase_roundtrip(kernel95):
    p = kernel95.phases()
    again = materialize(p)
    np.testing.assert_allclose(again.weights, kernel95.weights, atol=1e-14)


def test_weights_are_read_only(kernel95):
    with pytest.raises(ValueError):
        kernel95.weights[0, 0] = 0


def test_random_phases_uniform():
    ph = combiner.random_phases(200, 50, np.random.default_rng(3)).ravel()
    assert ph.min() > 0 and ph.max() <= 2 * np.pi
    assert stats.kstest(ph / (2 * np.pi), "uniform").pvalue > 1e-3


def test_random_kernel_reproducible():
    a = random_kernel(5, 9, seed=11)
    b = random_kernel(5, 9, seed=11)
    c = random_kernel(5, 9, seed=12)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)
    ks = combiner.random_kernels(5, 9, 3, seed=4)
    assert np.array_equal(ks[1].weights, combiner.random_kernels(5, 9, 3, seed=4)[1].weights)


def test_random_kernel_shape_check():
    with pytest.raises(ValueError):
        random_kernel(10, 9)


@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31),
       st.sampled_from([1.0, 0.7, 0.123456789]))
def test_text_roundtrip_is_exact(M, N, seed, eta):
    if M > N:
        M, N = N, M
    phi = random_kernel(M, N, seed, eta)
    back = combiner.loads(combiner.dumps(phi))
    assert np.array_equal(back.weights, phi.weights)
    assert (back.M, back.N, back.branch_count, back.efficiency, back.mode) == \
        (phi.M, phi.N, phi.branch_count, phi.efficiency, phi.mode)


def test_text_format_header(kernel95):
    first = combiner.dumps(kernel95).splitlines()[0].split()
    assert first == ["5", "9", "5", "1.0", "structured"]


def test_unconstrained_roundtrip():
    w = np.array([[1 + 2j, 0.5], [0, -3j]])
    back = combiner.loads(combiner.dumps(combiner.unconstrained(w)))
    assert back.mode == combiner.UNCONSTRAINED
    assert np.array_equal(back.weights, w)


@pytest.mark.parametrize("text", [
    "2 2 2 1.0\n1,0 1,0\n1,0 1,0\n",
    "2 2 2 1.0 structured\n0.7071067811865476,0 0.7071067811865476,0\n",
    "1 2 1 1.0 structured\n1,0\n",
])
def test_text_format_errors(text):
    with pytest.raises(ValueError):
        combiner.loads(text)


def test_save_load(tmp_path, kernel95):
    p = tmp_path / "phi.txt"
    combiner.save(kernel95, p)
    assert np.array_equal(combiner.load(p).weights, kernel95.weights)


def test_effective_manifold(kernel95):
    g = ArrayGeometry.uca(9, 0.65)
    A = steering_matrix(g, [0.1, 0.2])
    np.testing.assert_allclose(combiner.effective_manifold(kernel95, A), kernel95.weights @ A)
    with pytest.raises(ValueError):
        combiner.effective_manifold(kernel95, A[:5])


def test_rotation_keeps_structure(kernel95):
    r = kernel95.rotated(0.3)
    np.testing.assert_allclose(r.weights, kernel95.weights * np.exp(0.3j))
