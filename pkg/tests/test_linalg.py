import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_orthogonal, random_spd
from fleeting.errors import DimensionMismatchError, NotPositiveDefiniteError
from fleeting.linalg import build_d, eigendecompose, inverse_sqrt, sqrt_psd, symmetrize

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 40)


def test_symmetrize_exact():
    a = np.array([[1.0, 2.0], [2.0 + 1e-13, 3.0]])
    s = symmetrize(a)
    assert np.array_equal(s, s.T)


def test_symmetrize_rejects_bad_input():
    with pytest.raises(DimensionMismatchError):
        symmetrize(np.ones((2, 3)))
    with pytest.raises(ValueError):
        symmetrize(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_eigendecompose_identity():
    es = eigendecompose(np.eye(4))
    assert np.allclose(es.values, 1.0)
    assert es.dim == 4


def test_eigendecompose_diagonal_is_permuted_identity():
    es = eigendecompose(np.diag([1.0, 9.0, 4.0]))
    assert es.values.tolist() == [9.0, 4.0, 1.0]
    assert np.array_equal(es.vectors, np.eye(3)[:, [1, 2, 0]])


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_eigendecompose_invariants(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    s = a + a.T
    es = eigendecompose(s)
    assert np.all(np.diff(es.values) <= 0)
    assert np.linalg.norm(es.vectors.T @ es.vectors - np.eye(n)) < 1e-10
    assert np.linalg.norm(s - es.reconstruct()) / np.linalg.norm(s) < 1e-10
    cols = np.arange(n)
    big = np.argmax(np.abs(es.vectors), axis=0)
    assert np.all(es.vectors[big, cols] > 0)


def test_eigendecompose_is_deterministic(rng):
    a = rng.standard_normal((30, 30))
    e1, e2 = eigendecompose(a + a.T), eigendecompose(a + a.T)
    assert np.array_equal(e1.values, e2.values)
    assert np.array_equal(e1.vectors, e2.vectors)


def test_inverse_sqrt_examples():
    assert np.allclose(inverse_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    assert np.allclose(inverse_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_inverse_sqrt_defining_identity(seed, n):
    s = random_spd(n, np.random.default_rng(seed), condition=1e3)
    r = inverse_sqrt(s)
    assert np.array_equal(r, r.T)
    assert np.linalg.norm(r @ s @ r - np.eye(n)) < 1e-10
    assert np.linalg.norm(s @ r - r @ s) < 1e-10


def test_inverse_sqrt_matches_scipy(rng):
    s = random_spd(20, rng)
    ref = np.linalg.inv(scipy.linalg.sqrtm(s).real)
    assert np.allclose(inverse_sqrt(s), ref, atol=1e-10)


def test_inverse_sqrt_rejects_singular():
    with pytest.raises(NotPositiveDefiniteError):
        inverse_sqrt(np.diag([1.0, 0.0]))
    with pytest.raises(NotPositiveDefiniteError):
        inverse_sqrt(np.diag([1.0, -1.0]))
    # below the relative floor
    with pytest.raises(NotPositiveDefiniteError):
        inverse_sqrt(np.diag([1.0, 1e-13]))
    assert np.isfinite(inverse_sqrt(np.diag([1.0, 1e-13]), floor=0.0)).all()


def test_sqrt_psd_squares_back(rng):
    s = random_spd(15, rng)
    r = sqrt_psd(s)
    assert np.allclose(r @ r, s, atol=1e-10)
    x = rng.standard_normal((5, 2))
    low_rank = x @ x.T
    r = sqrt_psd(low_rank)
    assert np.allclose(r @ r, low_rank, atol=1e-10)


def test_build_d_equal_inputs_is_identity(rng):
    s = random_spd(10, rng)
    dm = build_d(s, s)
    assert np.allclose(dm.d, np.eye(10), atol=1e-10)
    assert np.allclose(dm.d_rotated, np.eye(10), atol=1e-10)


def test_build_d_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        build_d(np.eye(3), np.eye(4))


def test_build_d_rejects_singular_in_sample():
    with pytest.raises(NotPositiveDefiniteError):
        build_d(np.diag([1.0, 1.0, 0.0]), np.eye(3))


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 30))
def test_build_d_spectral_oracles(seed, n):
    rng = np.random.default_rng(seed)
    e_in = random_spd(n, rng, condition=50.0)
    x = rng.standard_normal((n, max(1, n // 2)))
    e_out = x @ x.T / x.shape[1]
    dm = build_d(e_in, e_out)
    lam = np.linalg.eigvalsh(dm.d)
    # characteristic polynomial of D equals that of E_in^{-1} E_out
    ref = np.sort(scipy.linalg.eigvals(e_out, e_in).real)
    scale = max(1.0, lam.max())
    assert np.max(np.abs(lam - ref)) / scale < 1e-10
    assert np.max(np.abs(np.linalg.eigvalsh(dm.d_rotated) - lam)) / scale < 1e-10
    o = random_orthogonal(n, rng)
    rotated = np.linalg.eigvalsh(o @ dm.d @ o.T)
    assert np.max(np.abs(rotated - lam)) / scale < 1e-10
    # d_rotated is D expressed in the risk-mode basis
    v = dm.risk_modes.vectors
    assert np.allclose(v.T @ dm.d @ v, dm.d_rotated, atol=1e-10 * scale)
    # symmetric root, not Cholesky
    r = inverse_sqrt(e_in)
    assert np.allclose(dm.d, r @ e_out @ r, atol=1e-9 * scale)


@pytest.mark.parametrize("condition", [1.0, 1e2, 1e4])
def test_c_independence_of_d_spectrum(condition):
    rng = np.random.default_rng(int(condition))
    n, t_in, t_out = 60, 240, 15
    g_in = rng.standard_normal((n, t_in))
    g_out = rng.standard_normal((n, t_out))
    w_in, w_out = g_in @ g_in.T / t_in, g_out @ g_out.T / t_out
    c = random_spd(n, rng, condition)
    root = sqrt_psd(c)
    white = np.linalg.eigvalsh(build_d(w_in, w_out).d)
    colored = np.linalg.eigvalsh(build_d(root @ w_in @ root, root @ w_out @ root).d)
    assert np.max(np.abs(white - colored)) < 1e-8
