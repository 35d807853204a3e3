r"""Spectral functions of symmetric matrices.

Everything here runs off one symmetric eigensolver, a cyclic Jacobi method
with round-robin (parallel) ordering. It is slower than LAPACK for large
matrices but delivers eigenvectors orthogonal to working precision, which the
divided-difference operators below rely on.

For :math:`\Theta = U \operatorname{diag}(\lambda) U^\top` the three
``n^2 x n^2`` operators share the form

.. math::

    (U \otimes U)\, \operatorname{diag}(w_{ij})\, (U \otimes U)^\top

with divided-difference weights

* ``psi``: :math:`(\lambda_i-\lambda_j)/(\log\lambda_i-\log\lambda_j)`
  (derivative of ``exp`` at ``log Theta``),
* ``h``: the reciprocal of ``psi`` (derivative of ``log`` at ``Theta``),
* ``xi``: :math:`(\lambda_i/\lambda_j+\lambda_j/\lambda_i-2)/\log^2(\lambda_i/\lambda_j)`.
"""

from __future__ import annotations

import functools
import os
from typing import Callable, Union

import numpy as np

from .errors import NotPositiveDefinite, NotSymmetric, NumericalError

__all__ = [
    "SpdMatrix",
    "as_symmetric",
    "eig_tol",
    "h_operator",
    "jacobi_eigh",
    "psi_operator",
    "spd_exp",
    "spd_log",
    "spd_power",
    "xi_operator",
]

DEFAULT_EIG_TOL = 1e-13
SYMMETRY_RTOL = 1e-12
# |l_i - l_j| <= EQUAL_RTOL * max(l_i, l_j) selects the confluent branch
EQUAL_RTOL = 1e-9


def eig_tol() -> float:
    """Jacobi stopping tolerance; ``KRONFIT_EIG_TOL`` overrides the default."""
    raw = os.environ.get("KRONFIT_EIG_TOL")
    if raw is None or raw.strip() == "":
        return DEFAULT_EIG_TOL
    tol = float(raw)
    if not (0.0 < tol < 1.0):
        raise ValueError(f"KRONFIT_EIG_TOL must lie in (0, 1), got {raw!r}")
    return tol


def as_symmetric(m, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Return ``(m + m.T)/2`` after checking that ``m`` is symmetric.

    Raises :class:`NotSymmetric` if the largest asymmetry exceeds ``rtol``
    times the largest entry.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSymmetric("matrix has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > rtol * scale:
        raise NotSymmetric(
            f"asymmetry {asym:.3g} exceeds {rtol:g} x max entry {scale:.3g}"
        )
    return 0.5 * (a + a.T)


@functools.lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # Circle-method tournament: each round is a set of disjoint (p, q) pairs and
    # every pair appears exactly once per sweep.
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def jacobi_eigh(m, tol: float | None = None, max_sweeps: int = 100):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi sweeps.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Symmetric input (the strictly upper triangle is assumed to mirror
        the lower one; no check is made here).
    tol : float, optional
        Stop once the off-diagonal Frobenius mass falls below
        ``tol * ||m||_F``. Defaults to :func:`eig_tol`.
    max_sweeps : int
        Safety limit; exceeding it raises :class:`NumericalError`.

    Returns
    -------
    w : ndarray, shape (n,)
        Eigenvalues in ascending order.
    v : ndarray, shape (n, n)
        Orthogonal matrix whose columns are the matching eigenvectors,
        so that ``m = v @ diag(w) @ v.T``.
    """
    a = np.array(m, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    if tol is None:
        tol = eig_tol()
    scale = np.linalg.norm(a)
    if n <= 1 or scale == 0.0:
        return np.diag(a).copy(), v
    rounds = _round_robin(n)
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[offmask] ** 2))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            nz = apq != 0.0
            c = np.ones_like(apq)
            s = np.zeros_like(apq)
            if np.any(nz):
                tau = (aqq[nz] - app[nz]) / (2.0 * apq[nz])
                sign = np.where(tau >= 0.0, 1.0, -1.0)
                with np.errstate(over="ignore", invalid="ignore"):
                    t = sign / (np.abs(tau) + np.hypot(1.0, tau))
                t = np.where(np.isfinite(t), t, 0.0)
                c[nz] = 1.0 / np.sqrt(1.0 + t * t)
                s[nz] = t * c[nz]
            ap = a[:, p].copy()
            aq = a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap = a[p, :].copy()
            aq = a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp = v[:, p].copy()
            vq = v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


class SpdMatrix:
    """Immutable symmetric positive-definite matrix with its eigendecomposition.

    The input is symmetrized (see :func:`as_symmetric`) and decomposed once;
    a non-positive eigenvalue raises :class:`NotPositiveDefinite`.
    """

    __slots__ = ("_a", "_w", "_v")

    def __init__(self, entries):
        if isinstance(entries, SpdMatrix):
            a, w, v = entries._a, entries._w, entries._v
        else:
            a = as_symmetric(entries)
            w, v = jacobi_eigh(a)
        _check_positive(w)
        self._set(a, w, v)

    @classmethod
    def from_eig(cls, w, v) -> "SpdMatrix":
        """Assemble ``v diag(w) v^T`` from a known eigendecomposition."""
        w = np.asarray(w, dtype=float)
        v = np.asarray(v, dtype=float)
        _check_positive(w)
        a = (v * w) @ v.T
        obj = cls.__new__(cls)
        obj._set(0.5 * (a + a.T), w, v)
        return obj

    def _set(self, a, w, v):
        for arr in (a, w, v):
            arr.flags.writeable = False
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_v", v)

    def __setattr__(self, name, value):
        raise AttributeError("SpdMatrix is immutable")

    @property
    def array(self) -> np.ndarray:
        return self._a

    @property
    def eigvals(self) -> np.ndarray:
        return self._w

    @property
    def eigvecs(self) -> np.ndarray:
        return self._v

    @property
    def dim(self) -> int:
        return self._a.shape[0]

    def apply(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Spectral function ``U diag(f(lambda)) U^T`` as a plain array."""
        a = (self._v * f(self._w)) @ self._v.T
        return 0.5 * (a + a.T)

    def __array__(self, dtype=None, copy=None):
        return np.array(self._a, dtype=dtype, copy=True)

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim}, eigvals=[{self._w[0]:.4g} .. {self._w[-1]:.4g}])"


SpdLike = Union[SpdMatrix, np.ndarray]


def _check_positive(w):
    bad = np.flatnonzero(~(w > 0.0))
    if bad.size:
        i = int(bad[0])
        raise NotPositiveDefinite(i, float(w[i]))


def _spd(m: SpdLike) -> SpdMatrix:
    return m if isinstance(m, SpdMatrix) else SpdMatrix(m)


def spd_log(m: SpdLike) -> np.ndarray:
    """Principal matrix logarithm of an SPD matrix (a symmetric array)."""
    return _spd(m).apply(np.log)


def spd_exp(m) -> SpdMatrix:
    """Matrix exponential of a symmetric matrix."""
    a = as_symmetric(m)
    w, v = jacobi_eigh(a)
    return SpdMatrix.from_eig(np.exp(w), v)


def spd_power(m: SpdLike, p: float) -> SpdMatrix:
    """Real power ``M^p`` of an SPD matrix."""
    s = _spd(m)
    if p == 1:
        return s
    return SpdMatrix.from_eig(s.eigvals ** p, s.eigvecs)


def _pairwise(lam: np.ndarray):
    li = lam[:, None]
    lj = lam[None, :]
    diff = li - lj
    equal = np.abs(diff) <= EQUAL_RTOL * np.maximum(li, lj)
    # log(li/lj) without cancellation for close eigenvalues
    with np.errstate(divide="ignore", invalid="ignore"):
        logratio = np.log1p(diff / lj)
    return li, lj, diff, equal, logratio


def psi_weights(lam) -> np.ndarray:
    """Logarithmic means ``(l_i - l_j)/(log l_i - log l_j)``, symmetric n x n."""
    li, lj, diff, equal, lr = _pairwise(np.asarray(lam, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(equal, 0.5 * (li + lj), diff / np.where(equal, 1.0, lr))
    return 0.5 * (w + w.T)


def h_weights(lam) -> np.ndarray:
    li, lj, diff, equal, lr = _pairwise(np.asarray(lam, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(equal, 2.0 / (li + lj), lr / np.where(equal, 1.0, diff))
    return 0.5 * (w + w.T)


def xi_weights(lam) -> np.ndarray:
    li, lj, diff, equal, lr = _pairwise(np.asarray(lam, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        # (r + 1/r - 2) = diff^2 / (li lj), evaluated without cancellation
        w = np.where(equal, 1.0, (diff / np.where(equal, 1.0, lr)) ** 2 / (li * lj))
    return 0.5 * (w + w.T)


def spectral_operator(u: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``(U kron U) diag(vec weights) (U kron U)^T`` for symmetric ``weights``."""
    uu = np.kron(u, u)
    out = (uu * weights.reshape(-1)) @ uu.T
    return 0.5 * (out + out.T)


def psi_operator(theta: SpdLike) -> np.ndarray:
    r"""Integral :math:`\int_0^1 \Theta^t \otimes \Theta^{1-t}\,dt` in closed form."""
    s = _spd(theta)
    return spectral_operator(s.eigvecs, psi_weights(s.eigvals))


def h_operator(theta: SpdLike) -> np.ndarray:
    r"""Integral :math:`\int_0^1 [t(\Theta-I)+I]^{-1} \otimes [t(\Theta-I)+I]^{-1}\,dt`.

    This is the derivative of ``vec log`` at ``Theta`` and the inverse of
    :func:`psi_operator`.
    """
    s = _spd(theta)
    return spectral_operator(s.eigvecs, h_weights(s.eigvals))


def xi_operator(theta: SpdLike) -> np.ndarray:
    r"""Double integral :math:`\int_0^1\int_0^1 \Theta^{t+s-1} \otimes \Theta^{1-t-s}\,dt\,ds`."""
    s = _spd(theta)
    return spectral_operator(s.eigvecs, xi_weights(s.eigvals))


def frechet_apply(theta: SpdLike, x: np.ndarray, kind: str = "psi") -> np.ndarray:
    """Apply one of the operators to ``vec(x)`` without forming it; returns a matrix.

    ``unvec(psi_operator(theta) @ vec(x))`` equals ``frechet_apply(theta, x)``.
    """
    s = _spd(theta)
    weights = {"psi": psi_weights, "h": h_weights, "xi": xi_weights}[kind](s.eigvals)
    u = s.eigvecs
    return u @ (weights * (u.T @ x @ u)) @ u.T
