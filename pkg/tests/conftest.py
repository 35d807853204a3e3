from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

N_NODES = 64


def random_spd(rng, n, lo=0.2, hi=5.0):
    """SPD matrix with eigenvalues drawn uniformly from [lo, hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = rng.uniform(lo, hi, n)
    m = (q * w) @ q.T
    return 0.5 * (m + m.T)


def random_corr(rng, n):
    """Random correlation matrix, well conditioned."""
    a = rng.standard_normal((n, n + 3))
    s = a @ a.T / (n + 3) + 0.3 * np.eye(n)
    r = 1.0 / np.sqrt(np.diag(s))
    c = s * np.outer(r, r)
    np.fill_diagonal(c, 1.0)
    return c


def random_sym(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) * scale
    return 0.5 * (a + a.T)


def _nodes():
    x, w = np.polynomial.legendre.leggauss(N_NODES)
    return 0.5 * (x + 1.0), 0.5 * w


def quad_psi(theta):
    """int_0^1 Theta^t kron Theta^{1-t} dt with scipy expm/logm (independent of the package)."""
    om = np.real(scipy.linalg.logm(theta))
    t, w = _nodes()
    return sum(wk * np.kron(scipy.linalg.expm(tk * om), scipy.linalg.expm((1 - tk) * om))
               for tk, wk in zip(t, w))


def quad_h(theta):
    n = theta.shape[0]
    t, w = _nodes()
    out = 0.0
    for tk, wk in zip(t, w):
        inv = np.linalg.inv(tk * (theta - np.eye(n)) + np.eye(n))
        out = out + wk * np.kron(inv, inv)
    return out


def quad_xi_power(theta):
    """int int Theta^{t+s-1} kron Theta^{1-t-s} dt ds."""
    om = np.real(scipy.linalg.logm(theta))
    t, w = _nodes()
    out = 0.0
    for tk, wk in zip(t, w):
        for sk, vk in zip(t, w):
            p = tk + sk - 1.0
            out = out + wk * vk * np.kron(scipy.linalg.expm(p * om), scipy.linalg.expm(-p * om))
    return out


def quad_xi_weighted(theta):
    """int int (e^{-st Omega} kron e^{st Omega} + e^{st Omega} kron e^{-st Omega}) t ds dt."""
    om = np.real(scipy.linalg.logm(theta))
    t, w = _nodes()
    out = 0.0
    for tk, wk in zip(t, w):
        for sk, vk in zip(t, w):
            a = scipy.linalg.expm(sk * tk * om)
            b = scipy.linalg.expm(-sk * tk * om)
            out = out + wk * vk * tk * (np.kron(b, a) + np.kron(a, b))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
