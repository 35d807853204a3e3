"""Turning a fitted ``exp(Omega)`` back into a correlation matrix.

A 2 x 2 symmetric matrix with eigenvectors ``(1, 1)/sqrt 2`` and
``(1, -1)/sqrt 2`` and log-eigenvalues ``(l1, l2)`` has
``vech(log) = C (l1, l2)`` with ``C = [[1, 1], [1, -1], [1, 1]] / 2`` and
exponential ``[[e1 + e2, e1 - e2], [e1 - e2, e1 + e2]] / 2``. Its diagonal is
one exactly when ``e^{l1} + e^{l2} = 2``, which leaves the single parameter
``l2 <= log 2``; every 2 x 2 correlation matrix arises this way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import build_design, theta_to_factor_logs
from .errors import NonPositiveDiagonal, UnsupportedFactorDim
from .kalg import kron_all
from .matfun import SpdMatrix

__all__ = [
    "TwoByTwoFactorParams",
    "renormalize",
    "shrink_factor_2x2",
    "shrink_model",
]

LOG2 = math.log(2.0)
LOWER = -20.0
_C = 0.5 * np.array([[1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
# uniform in t plus points piling up at log 2, where lambda1 varies fastest
_SCAN = np.unique(np.concatenate([
    np.linspace(LOWER, LOG2, 401)[:-1],
    LOG2 - np.logspace(-15.0, 0.0, 121),
]))


@dataclass(frozen=True)
class TwoByTwoFactorParams:
    """Log-eigenvalues of a 2 x 2 correlation factor, ``e^{lambda1} + e^{lambda2} = 2``."""

    lambda2: float

    def __post_init__(self):
        if not self.lambda2 <= LOG2:
            raise ValueError(f"lambda2 must be <= log 2, got {self.lambda2}")

    @property
    def lambda1(self) -> float:
        return _lambda1(self.lambda2)

    def vech_log(self) -> np.ndarray:
        return _C @ np.array([self.lambda1, self.lambda2])

    def matrix(self) -> np.ndarray:
        off = -math.expm1(self.lambda2)  # (e^{l1} - e^{l2}) / 2 = 1 - e^{l2}
        return np.array([[1.0, off], [off, 1.0]])


def _lambda1(t: float) -> float:
    # log(2 - e^t), accurate near t = log 2 and for very negative t
    return math.log(2.0) + math.log1p(-0.5 * math.exp(t)) if t < LOG2 else -math.inf


def _objective(block: np.ndarray, t: float) -> float:
    l1 = _lambda1(t)
    if not math.isfinite(l1):
        return math.inf
    r = block - _C @ np.array([l1, t])
    return float(r @ r)


def _derivative(block: np.ndarray, t: float) -> float:
    l1 = _lambda1(t)
    et = math.exp(t)
    dl1 = -et / (2.0 - et)
    r = block - _C @ np.array([l1, t])
    return float(-2.0 * r @ (_C @ np.array([dl1, 1.0])))


def shrink_factor_2x2(block) -> tuple[TwoByTwoFactorParams, np.ndarray]:
    """Closest constrained 2 x 2 log-correlation to ``block = vech(log Theta_j)``.

    Minimizes ``|block - C (log(2 - e^t), t)|_2`` over ``t <= log 2``. The
    objective need not be unimodal, so a coarse scan of ``[-20, log 2]``
    first picks the bracket around the smallest sampled value; a
    golden-section search inside it is followed by 50 bisection steps on the
    sign of the derivative.

    Returns
    -------
    params : TwoByTwoFactorParams
    matrix : ndarray
        The 2 x 2 correlation matrix ``exp(C (lambda1, lambda2))``.
    """
    b = np.asarray(block, dtype=float).reshape(3)
    lo, hi = LOWER, LOG2
    # the objective blows up at log 2, so search just below it
    hi_eff = LOG2 - 1e-15
    # the objective can have two local minima, so bracket the global one first
    vals = [_objective(b, x) for x in _SCAN]
    k = int(np.argmin(vals))
    a, c = _SCAN[max(k - 1, 0)], _SCAN[min(k + 1, len(_SCAN) - 1)]
    x1 = c - _INVPHI * (c - a)
    x2 = a + _INVPHI * (c - a)
    f1, f2 = _objective(b, x1), _objective(b, x2)
    for _ in range(200):
        if c - a < 1e-12:
            break
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - _INVPHI * (c - a)
            f1 = _objective(b, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INVPHI * (c - a)
            f2 = _objective(b, x2)
    # refine the stationary point when the bracket holds a sign change
    if _derivative(b, a) < 0.0 < _derivative(b, c):
        for _ in range(50):
            mid = 0.5 * (a + c)
            if _derivative(b, mid) < 0.0:
                a = mid
            else:
                c = mid
    candidates = [0.5 * (a + c), lo, hi_eff, _SCAN[k]]
    t = min(candidates, key=lambda x: _objective(b, x))
    p = TwoByTwoFactorParams(min(t, hi))
    return p, p.matrix()


def _rebalance(logs: list[np.ndarray]) -> list[np.ndarray]:
    # Shift each factor log by a multiple of I so its mean diagonal matches the
    # correlation matrix with the same off-diagonal log entry; the shifts sum
    # to zero so the Kronecker sum is unchanged. Any leftover total level is
    # split equally.
    targets = np.array([-math.log(math.cosh(lg[1, 0])) for lg in logs])
    means = np.array([0.5 * np.trace(lg) for lg in logs])
    shift = targets - means + (means.sum() - targets.sum()) / len(logs)
    return [lg + s * np.eye(2) for lg, s in zip(logs, shift)]


@dataclass(frozen=True, eq=False)
class ShrunkModel:
    factors: tuple[np.ndarray, ...]
    params: tuple[TwoByTwoFactorParams, ...]
    matrix: SpdMatrix


def shrink_model(dims, theta_hat) -> ShrunkModel:
    """Shrink every 2 x 2 factor to a correlation matrix and take their Kronecker product.

    The identification pins leave the overall level of each factor arbitrary,
    so the factor logs are first shifted by multiples of ``I`` (keeping their
    Kronecker sum fixed) to put each level where a correlation matrix with the
    same off-diagonal entry would have it.

    Raises
    ------
    UnsupportedFactorDim
        If any factor is not 2 x 2; use :func:`renormalize` instead.
    """
    design = build_design(dims)
    bad = [d for d in design.dims.dims if d != 2]
    if bad:
        raise UnsupportedFactorDim(
            f"2x2 shrinkage needs every factor to be 2 x 2, got dims {design.dims}; "
            "use renormalize for larger factors"
        )
    logs = _rebalance(theta_to_factor_logs(design, theta_hat))
    params, factors = [], []
    for lg in logs:
        p, m = shrink_factor_2x2(np.array([lg[0, 0], lg[1, 0], lg[1, 1]]))
        params.append(p)
        factors.append(m)
    full = kron_all(factors)
    np.fill_diagonal(full, 1.0)
    return ShrunkModel(tuple(factors), tuple(params), SpdMatrix(full))


def renormalize(m) -> SpdMatrix:
    """``D^{-1/2} M D^{-1/2}`` with ``D = diag(M)``; the diagonal is set to exactly one.

    Raises
    ------
    NonPositiveDiagonal
    """
    a = np.asarray(m.array if isinstance(m, SpdMatrix) else m, dtype=float)
    d = np.diag(a)
    if not np.all(d > 0):
        raise NonPositiveDiagonal(f"diagonal has non-positive entries: {d[~(d > 0)]}")
    r = 1.0 / np.sqrt(d)
    out = a * np.outer(r, r)
    np.fill_diagonal(out, 1.0)
    return SpdMatrix(out)
