import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chanadd.linalg import (
    NonHermitianError,
    NotPSDError,
    SingularMatrixError,
    eigvalsh,
    herm_eig,
    inverse,
    project_psd_trace,
    psd_sqrt,
    trace_norm,
)
from oracles import random_density, random_hermitian, trace_norm_svd

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, n=st.sampled_from([2, 4]), scale=st.sampled_from([1e-6, 1.0, 1e4]))
def test_herm_eig_matches_lapack(seed, n, scale):
    H = random_hermitian(np.random.default_rng(seed), n, scale)
    w, V = herm_eig(H)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(H), atol=1e-12 * max(scale, 1.0))
    np.testing.assert_allclose(V @ np.diag(w) @ V.conj().T, H, atol=1e-11 * max(scale, 1.0))
    np.testing.assert_allclose(V.conj().T @ V, np.eye(n), atol=1e-12)


def test_eigenvalues_are_roots_of_characteristic_polynomial():
    H = random_hermitian(np.random.default_rng(3), 4)
    coeffs = np.poly(H)
    for lam in eigvalsh(H):
        assert abs(np.polyval(coeffs, lam)) < 1e-9


def test_batched_matches_single():
    rng = np.random.default_rng(1)
    Hs = np.stack([random_hermitian(rng, 4) for _ in range(50)]).reshape(5, 10, 4, 4)
    w = eigvalsh(Hs)
    assert w.shape == (5, 10, 4)
    np.testing.assert_allclose(w[2, 7], eigvalsh(Hs[2, 7]), atol=1e-14)
    assert np.all(np.diff(w, axis=-1) >= 0)


@pytest.mark.parametrize(
    "H, expected",
    [
        (np.diag([3.0, -1.0, 2.0, 0.0]), [-1.0, 0.0, 2.0, 3.0]),
        (np.eye(4), [1.0, 1.0, 1.0, 1.0]),
        (np.array([[0, 1], [1, 0]]), [-1.0, 1.0]),
        (np.array([[0, -1j], [1j, 0]]), [-1.0, 1.0]),
        (np.zeros((2, 2)), [0.0, 0.0]),
    ],
)
def test_known_spectra(H, expected):
    np.testing.assert_allclose(eigvalsh(H), expected, atol=1e-15)


def test_diagonal_input_is_exact():
    d = np.array([0.7, 0.0, 0.2, 0.1])
    assert np.array_equal(eigvalsh(np.diag(d)), np.sort(d))


def test_degenerate_eigenvectors_still_orthonormal():
    rng = np.random.default_rng(5)
    U, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    H = U @ np.diag([1.0, 1.0, 2.0, 2.0]) @ U.conj().T
    w, V = herm_eig(H)
    np.testing.assert_allclose(w, [1, 1, 2, 2], atol=1e-12)
    np.testing.assert_allclose(V.conj().T @ V, np.eye(4), atol=1e-12)


def test_non_hermitian_rejected():
    with pytest.raises(NonHermitianError):
        herm_eig(np.array([[0, 1], [0, 0]]))


@pytest.mark.parametrize("bad", [np.zeros((3, 3)), np.zeros((2, 3)), np.array([[np.nan, 0], [0, 1]])])
def test_bad_shapes_rejected(bad):
    with pytest.raises(ValueError):
        herm_eig(bad)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_inverse_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    inv, cond = inverse(M)
    np.testing.assert_allclose(inv, np.linalg.inv(M), rtol=1e-9, atol=1e-9)
    assert cond == pytest.approx(np.linalg.cond(M, 1), rel=1e-9)
    assert cond >= 1.0


def test_inverse_singular():
    with pytest.raises(SingularMatrixError):
        inverse(np.diag([1.0, 1.0, 1.0, 0.0]))
    with pytest.raises(SingularMatrixError):
        inverse(np.zeros((2, 2)))
    with pytest.raises(SingularMatrixError):
        inverse(np.diag([1.0, 1.0, 1.0, 1e-17]))


def test_inverse_needs_pivoting():
    M = np.array([[0, 1], [1, 0]], dtype=complex)
    inv, cond = inverse(M)
    np.testing.assert_array_equal(inv, M)
    assert cond == 1.0


@settings(max_examples=40, deadline=None)
@given(seed=seeds, hermitian=st.booleans())
def test_trace_norm_matches_svd(seed, hermitian):
    rng = np.random.default_rng(seed)
    M = random_hermitian(rng, 4) if hermitian else rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert trace_norm(M) == pytest.approx(trace_norm_svd(M), rel=1e-11)


def test_trace_norm_mixed_batch():
    rng = np.random.default_rng(2)
    Ms = np.stack([random_hermitian(rng, 4), rng.normal(size=(4, 4)) + 0j, random_hermitian(rng, 4)])
    np.testing.assert_allclose(trace_norm(Ms), [trace_norm_svd(M) for M in Ms], rtol=1e-11)


def test_trace_norm_of_density_matrix_is_one():
    rho = random_density(np.random.default_rng(0), 4)
    assert trace_norm(rho) == pytest.approx(1.0, abs=1e-13)


def test_psd_sqrt():
    rho = random_density(np.random.default_rng(8), 4, rank=2)
    r = psd_sqrt(rho)
    np.testing.assert_allclose(r @ r, rho, atol=1e-12)
    np.testing.assert_allclose(r, r.conj().T, atol=1e-14)
    with pytest.raises(NotPSDError):
        psd_sqrt(np.diag([1.0, -0.1]))


def test_project_psd_trace():
    H = np.diag([0.6, 0.5, -0.1, 0.0])
    P = project_psd_trace(H)
    np.testing.assert_allclose(np.diag(P).real, [0.6 / 1.1, 0.5 / 1.1, 0, 0], atol=1e-15)
    rho = random_density(np.random.default_rng(4), 4)
    np.testing.assert_allclose(project_psd_trace(rho), rho, atol=1e-13)
    with pytest.raises(NotPSDError):
        project_psd_trace(-np.eye(2))
