import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aagp.exceptions import DimensionError, DomainError
from aagp.kernels import (NonsepParams, SepParams, chordal_distance, corr_matrix,
                          gneiting_corr, gneiting_kernel, separable_corr, separable_kernel)
from aagp.linalg import cholesky_spd

import oracle


def test_gneiting_zero_lag_is_one():
    p = NonsepParams(a=0.7, c=3.0, beta=0.4)
    assert gneiting_corr(0.0, 0.0, p) == 1.0


def test_gneiting_scalar_value():
    # psi = 2, so 2^-1 * exp(-1 / 2^0.4)
    p = NonsepParams(a=1.0, c=5.0, beta=0.8, alpha=0.5, d=2)
    expected = 0.5 * np.exp(-1.0 / 2.0 ** 0.4)
    assert gneiting_corr(5.0, 1.0, p) == pytest.approx(expected, rel=1e-14)
    assert gneiting_corr(5.0, 1.0, p) == pytest.approx(0.2343, abs=5e-5)


def test_gneiting_beta_zero_factorizes(rng):
    p = NonsepParams(a=1.3, c=2.2, beta=0.0, alpha=0.5, d=2)
    h = rng.random(1000) * 10
    t = rng.random(1000) * 10
    time_part = (t ** (2 * p.alpha) / p.a + 1.0) ** (-p.d / 2)
    np.testing.assert_allclose(gneiting_corr(h, t, p), time_part * np.exp(-h / p.c), rtol=1e-15)


def test_gneiting_rejects_bad_input():
    p = NonsepParams(a=1.0, c=1.0, beta=0.5)
    with pytest.raises(DomainError):
        gneiting_corr(np.nan, 0.0, p)
    with pytest.raises(DomainError):
        gneiting_corr(1.0, -1.0, p)
    with pytest.raises(DomainError):
        NonsepParams(a=0.0, c=1.0, beta=0.5)
    with pytest.raises(DomainError):
        NonsepParams(a=1.0, c=1.0, beta=1.5)
    with pytest.raises(DomainError):
        NonsepParams(a=1.0, c=1.0, beta=0.5, alpha=0.0)


def test_separable_examples():
    p = SepParams(phi_s=5.0, phi_u=1.0)
    assert separable_corr(0.0, 0.0, p) == 1.0
    assert separable_corr(5.0, 1.0, p) == pytest.approx(np.exp(-2.0), rel=1e-14)
    assert separable_corr(5.0, 1.0, p) == pytest.approx(0.1353, abs=5e-5)
    e = SepParams(phi_s=2.5, phi_u=1.0, space_family="exponential")
    assert separable_corr(2.5, 0.0, e) == pytest.approx(np.exp(-1.0), rel=1e-14)
    with pytest.raises(DomainError):
        separable_corr(np.inf, 0.0, p)
    with pytest.raises(DomainError):
        SepParams(phi_s=1.0, phi_u=1.0, time_family="matern")


def test_chordal_examples():
    assert chordal_distance([10.0, 20.0], [10.0, 20.0]) == 0.0
    assert chordal_distance([0.0, 0.0], [180.0, 0.0]) == pytest.approx(12742.0, rel=1e-12)
    assert chordal_distance([0.0, 0.0], [0.0, 90.0]) == pytest.approx(6371 * np.sqrt(2), rel=1e-12)
    assert chordal_distance([0.0, 0.0], [0.0, 90.0]) == pytest.approx(9009.9, abs=0.1)
    with pytest.raises(DomainError):
        chordal_distance([0.0, 91.0], [0.0, 0.0])
    with pytest.raises(DomainError):
        chordal_distance([181.0, 0.0], [0.0, 0.0])


def test_corr_matrix_single_point():
    p = NonsepParams(a=1.0, c=1.0, beta=0.5)
    np.testing.assert_array_equal(corr_matrix([[1.0, 2.0, 3.0]], [[1.0, 2.0, 3.0]], gneiting_kernel(p)), [[1.0]])


def test_corr_matrix_elementwise(rng):
    A = rng.random((3, 3)) * 5
    p = NonsepParams(a=0.8, c=1.7, beta=0.3)
    M = corr_matrix(A, A, gneiting_kernel(p))
    for i in range(3):
        for j in range(3):
            h = np.linalg.norm(A[i, :2] - A[j, :2])
            t = abs(A[i, 2] - A[j, 2])
            assert M[i, j] == pytest.approx(oracle.gneiting(h, t, 0.8, 1.7, 0.3), rel=1e-13)
    np.testing.assert_array_equal(M, M.T)
    np.testing.assert_array_equal(np.diag(M), 1.0)


def test_corr_matrix_dimension_mismatch():
    p = SepParams(1.0, 1.0)
    with pytest.raises(DimensionError):
        corr_matrix(np.zeros((2, 3)), np.zeros((2, 4)), separable_kernel(p))


def test_corr_matrix_chordal():
    A = np.array([[0.0, 0.0, 0.0], [0.0, 90.0, 0.0]])
    p = SepParams(phi_s=6371 * np.sqrt(2), phi_u=1.0, space_family="exponential")
    M = corr_matrix(A, A, separable_kernel(p), metric="chordal")
    assert M[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 50), st.floats(0.05, 10), st.floats(0.05, 10), st.floats(0, 1),
       st.integers(0, 2 ** 31))
def test_corr_matrix_spd_with_jitter(n, a, c, beta, seed):
    X = np.random.default_rng(seed).random((n, 3)) * 10
    for k in (gneiting_kernel(NonsepParams(a, c, beta)), separable_kernel(SepParams(a, c))):
        M = corr_matrix(X, X, k)
        # far pairs may underflow to 0 under the squared exponential
        assert np.all(M >= 0) and np.all(M <= 1)
        chol = cholesky_spd(M + 1e-10 * np.eye(n), jitter_schedule=(0.0,))
        assert chol.jitter == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 20), st.floats(0.05, 20), st.floats(0, 1), st.floats(0.1, 1), st.integers(1, 3))
def test_gneiting_monotone(a, c, beta, alpha, d):
    p = NonsepParams(a, c, beta, alpha, d)
    grid = np.linspace(0, 30, 200)
    for t in (0.0, 0.5, 3.0):
        assert np.all(np.diff(gneiting_corr(grid, t, p)) <= 0)
    # d log rho / d psi = (h beta / (c psi^(beta/2)) - d) / (2 psi), which is <= 0
    # for every psi >= 1 once h beta <= c d
    h_max = np.inf if beta == 0 else c * d / beta
    for h in (0.0, 0.5 * min(h_max, 30.0), min(h_max, 30.0)):
        assert np.all(np.diff(gneiting_corr(h, grid, p)) <= 1e-15)
    vals = gneiting_corr(grid[:, None], grid[None, :], p)
    assert np.all(vals > 0) and np.all(vals <= 1)
    assert np.all(vals[1:, :] < 1) and np.all(vals[:, 1:] < 1)


def test_gneiting_not_monotone_in_time_at_long_range():
    # with h beta > c d the spatial factor widens faster than psi^(-d/2) decays
    p = NonsepParams(a=1.0, c=1.0, beta=1.0, alpha=1.0, d=1)
    vals = gneiting_corr(3.0, np.array([0.0, 1.0]), p)
    assert vals[1] > vals[0]
