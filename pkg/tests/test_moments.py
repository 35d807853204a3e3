from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from conftest import random_corr
from kronfit import kalg
from kronfit.errors import DataError, DimensionMismatch, SingularCovariance
from kronfit.moments import (
    MomentSet,
    Panel,
    Regime,
    compute_moments,
    correlation_jacobian,
    gaussian_v,
    p_matrix,
)


def brute_v(y):
    T, n = y.shape
    c = y - y.mean(axis=0)
    v = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    m4 = sum(c[t, i] * c[t, j] * c[t, k] * c[t, l] for t in range(T)) / T
                    m2a = sum(c[t, i] * c[t, j] for t in range(T)) / T
                    m2b = sum(c[t, k] * c[t, l] for t in range(T)) / T
                    v[i * n + j, k * n + l] = m4 - m2a * m2b
    return v


def log_corr(sigma):
    r = 1.0 / np.sqrt(np.diag(sigma))
    return np.real(scipy.linalg.logm(sigma * np.outer(r, r)))


class TestPanel:
    def test_validation(self):
        with pytest.raises(DimensionMismatch):
            Panel(np.zeros((1, 3)))
        with pytest.raises(DataError):
            Panel(np.array([[1.0, np.nan], [2.0, 3.0]]))
        with pytest.raises(DimensionMismatch):
            Panel(np.zeros((3, 2)), names=("a",))
        p = Panel(np.zeros((3, 2)), names=["a", "b"])
        assert (p.T, p.n, p.names) == (3, 2, ("a", "b"))


class TestComputeMoments:
    def test_hand_panel_matches_brute_force(self):
        y = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]])
        m = compute_moments(Panel(y))
        np.testing.assert_allclose(m.v, brute_v(y), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(m.sigma.array, np.cov(y.T, bias=True), rtol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 3), st.integers(4, 10), st.integers(0, 2 ** 32 - 1))
    def test_brute_force_property(self, n, T, seed):
        y = np.random.default_rng(seed).standard_normal((T, n))
        m = compute_moments(Panel(y))
        v = brute_v(y)
        np.testing.assert_allclose(m.v, v, rtol=1e-12, atol=1e-12 * np.abs(v).max())

    def test_chunking_does_not_change_result(self, rng):
        y = rng.standard_normal((257, 3))
        a = compute_moments(Panel(y), chunk=10).v
        b = compute_moments(Panel(y), chunk=4096).v
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_invariants(self, rng):
        y = rng.standard_normal((500, 4)) @ np.diag([1.0, 2.0, 0.5, 3.0])
        m = compute_moments(Panel(y))
        np.testing.assert_array_equal(np.diag(m.theta.array), np.ones(4))
        r = 1.0 / np.sqrt(m.d)
        np.testing.assert_allclose(m.theta.array, m.sigma.array * np.outer(r, r), atol=1e-14)
        assert np.array_equal(m.v, m.v.T)
        np.testing.assert_array_equal(m.target(Regime.ESTIMATED_D).array, m.theta.array)

    def test_iid_correlation_near_zero(self):
        T = 100_000
        y = np.random.default_rng(1).standard_normal((T, 2))
        m = compute_moments(Panel(y))
        assert abs(m.theta.array[0, 1]) < 3 / np.sqrt(T)

    def test_constant_column(self):
        y = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
        with pytest.raises(SingularCovariance) as err:
            compute_moments(Panel(y))
        assert err.value.suggested_ridge > 0

    def test_known_mean(self, rng):
        y = rng.standard_normal((50, 2))
        m = compute_moments(Panel(y), mu=np.zeros(2))
        np.testing.assert_allclose(m.sigma.array, y.T @ y / 50, rtol=1e-12)

    def test_known_d_target(self, rng):
        y = rng.standard_normal((200, 3))
        m = compute_moments(Panel(y)).with_known_d([1.0, 2.0, 4.0])
        r = 1.0 / np.sqrt([1.0, 2.0, 4.0])
        np.testing.assert_allclose(m.target(Regime.KNOWN_D).array,
                                   m.sigma.array * np.outer(r, r), atol=1e-14)
        with pytest.raises(DataError):
            compute_moments(Panel(y)).target(Regime.KNOWN_D)


class TestGaussianV:
    def test_matches_isserlis(self, rng):
        a = rng.standard_normal((3, 3))
        s = a @ a.T + np.eye(3)
        v = gaussian_v(s)
        for i, j, k, l in np.ndindex(3, 3, 3, 3):
            assert v[i * 3 + j, k * 3 + l] == pytest.approx(s[i, k] * s[j, l] + s[i, l] * s[j, k],
                                                             rel=1e-13)

    def test_empirical_converges(self):
        s = np.array([[1.0, 0.4], [0.4, 2.0]])
        y = np.random.default_rng(4).multivariate_normal(np.zeros(2), s, size=200_000)
        m = compute_moments(Panel(y))
        np.testing.assert_allclose(m.v, gaussian_v(s), atol=0.06)


class TestJacobian:
    def test_identity_case(self):
        n = 3
        expected = np.eye(9) - kalg.duplication(n) @ kalg.duplication_pinv(n) @ kalg.diag_select(n)
        np.testing.assert_allclose(correlation_jacobian(np.eye(3), np.ones(3)), expected,
                                   atol=1e-15)

    def test_numerical_jacobian_2x2(self):
        sigma = np.array([[1.0, 0.5], [0.5, 2.0]])
        d = np.diag(sigma)
        r = 1 / np.sqrt(d)
        jac = correlation_jacobian(sigma * np.outer(r, r), d)
        h = 1e-6
        for (i, j) in [(0, 0), (1, 0), (1, 1)]:
            e = np.zeros((2, 2))
            e[i, j] = e[j, i] = 1.0
            fd = (log_corr(sigma + h * e) - log_corr(sigma - h * e)) / (2 * h)
            np.testing.assert_allclose(kalg.vec(fd), jac @ kalg.vec(e), atol=1e-6)

    def test_finite_difference_ladder(self, rng):
        theta = random_corr(rng, 3)
        d = np.array([1.0, 2.5, 0.7])
        sigma = theta * np.sqrt(np.outer(d, d))
        jac = correlation_jacobian(theta, d)
        direction = rng.standard_normal((3, 3))
        direction = direction + direction.T
        direction /= np.linalg.norm(direction)
        resid = []
        for k in range(4):
            ds = direction * 1e-3 / 2 ** k
            lin = (jac @ kalg.vec(ds)).reshape(3, 3, order="F")
            resid.append(np.linalg.norm(log_corr(sigma + ds) - log_corr(sigma) - lin))
        ratios = np.array(resid[:-1]) / np.array(resid[1:])
        assert np.all((ratios > 3.0) & (ratios < 5.0)), ratios

    def test_p_removes_diagonal(self, rng):
        theta = random_corr(rng, 4)
        x = rng.standard_normal((4, 4))
        x = x + x.T
        out = (p_matrix(theta) @ kalg.vec(x)).reshape(4, 4, order="F")
        np.testing.assert_allclose(np.diag(out), 0.0, atol=1e-14)
        # off-diagonal directions pass through unchanged
        off = x - np.diag(np.diag(x))
        np.testing.assert_allclose(p_matrix(theta) @ kalg.vec(off), kalg.vec(off), atol=1e-15)

    def test_known_d_drops_p(self, rng):
        theta = random_corr(rng, 3)
        d = np.array([1.0, 2.0, 3.0])
        with_p = correlation_jacobian(theta, d)
        without = correlation_jacobian(theta, d, with_p=False)
        scale = np.kron(1 / np.sqrt(d), 1 / np.sqrt(d))
        np.testing.assert_allclose(with_p, without / scale @ p_matrix(theta) * scale, atol=1e-13)


def test_population_moments():
    s = np.array([[2.0, 0.6], [0.6, 1.0]])
    m = MomentSet.population(s, T=100)
    np.testing.assert_allclose(m.theta.array[0, 1], 0.6 / np.sqrt(2.0))
    np.testing.assert_allclose(m.v, gaussian_v(s))
