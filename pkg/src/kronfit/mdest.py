"""Closed-form minimum-distance estimation of the log-correlation parameters.

The estimator minimizes ``(y - E theta)' W (y - E theta)`` with
``y = vech(log Theta_hat)``. The normal equations are never formed: with
``W = L L'`` the problem becomes ordinary least squares in ``L' E`` and is
solved by a column-pivoted QR factorization, which also reveals rank loss.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kalg
from .design import DesignMatrix, build_design
from .errors import DataError, DimensionMismatch, NotPositiveDefinite, SingularNormalEquations
from .moments import MomentSet, Regime

__all__ = [
    "MdEstimate",
    "WeightKind",
    "WeightSpec",
    "clipped_pinv",
    "md_estimate",
    "md_variance",
]

RANK_RTOL = 1e-10
CLIP_RTOL = 1e-10


class WeightKind(str, enum.Enum):
    IDENTITY = "identity"
    SUPPLIED = "supplied"
    OPTIMAL = "optimal"


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """Weighting matrix choice; ``matrix`` is set only for supplied weights."""

    kind: WeightKind = WeightKind.IDENTITY
    matrix: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if self.kind is WeightKind.SUPPLIED:
            if self.matrix is None:
                raise DataError("a supplied weight needs a matrix")
            m = np.array(self.matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise DimensionMismatch(f"weight must be square, got {m.shape}")
            if np.max(np.abs(m - m.T)) > 1e-12 * max(np.max(np.abs(m)), 1.0):
                raise DataError("weight matrix is not symmetric")
            m = 0.5 * (m + m.T)
            m.flags.writeable = False
            object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "WeightSpec":
        return cls(WeightKind.IDENTITY)

    @classmethod
    def supplied(cls, matrix) -> "WeightSpec":
        return cls(WeightKind.SUPPLIED, matrix)

    @classmethod
    def optimal(cls) -> "WeightSpec":
        return cls(WeightKind.OPTIMAL)


def clipped_pinv(s: np.ndarray, rtol: float = CLIP_RTOL) -> tuple[np.ndarray, int]:
    """Pseudo-inverse of a symmetric PSD matrix with eigenvalues below ``rtol * max`` dropped.

    Returns the pseudo-inverse and the number of dropped eigenvalues.
    """
    w, q = np.linalg.eigh(0.5 * (s + s.T))
    keep = w > rtol * max(w[-1], 0.0)
    inv = (q[:, keep] / w[keep]) @ q[:, keep].T
    return 0.5 * (inv + inv.T), int(np.count_nonzero(~keep))


def resolve_weight(weight: WeightSpec, moments: MomentSet, design: DesignMatrix,
                   regime: Regime, v_kind: str = "empirical") -> tuple[np.ndarray, int]:
    """Concrete weight matrix and the number of clipped eigenvalues (optimal weight only)."""
    N = design.n_moments
    if weight.kind is WeightKind.IDENTITY:
        return np.eye(N), 0
    if weight.kind is WeightKind.SUPPLIED:
        if weight.matrix.shape != (N, N):
            raise DimensionMismatch(f"weight must be {N} x {N}, got {weight.matrix.shape}")
        return weight.matrix, 0
    from .infer import s_matrix

    return clipped_pinv(s_matrix(moments, regime, v_kind))


@dataclass(frozen=True, eq=False)
class _WeightedLs:
    theta: np.ndarray
    bread: np.ndarray  # (E'WE)^{-1}
    proj: np.ndarray  # (E'WE)^{-1} E'W


def _weight_root(w: np.ndarray) -> np.ndarray:
    """``R`` with ``W = R R'``; eigen-based so PSD (pseudo-inverse) weights work too."""
    try:
        return np.linalg.cholesky(w)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(w)
        if vals[0] < -1e-10 * max(vals[-1], 1e-300):
            raise NotPositiveDefinite(0, float(vals[0])) from None
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _solve(E: np.ndarray, w: np.ndarray, y: np.ndarray) -> _WeightedLs:
    root = _weight_root(w)
    a = root.T @ E
    q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[-1] <= RANK_RTOL * diag[0]:
        raise SingularNormalEquations(
            f"E'WE is numerically singular (pivot ratio {diag[-1] / diag[0]:.3g})"
        )
    s = E.shape[1]
    rinv = scipy.linalg.solve_triangular(r, np.eye(s))
    # undo the column pivoting: theta[piv] = R^{-1} Q' (root' y)
    proj_p = rinv @ q.T @ root.T
    proj = np.empty_like(proj_p)
    proj[piv] = proj_p
    bread_p = rinv @ rinv.T
    bread = np.empty_like(bread_p)
    bread[np.ix_(piv, piv)] = bread_p
    bread = 0.5 * (bread + bread.T)
    return _WeightedLs(proj @ y, bread, proj)


@dataclass(frozen=True, eq=False)
class MdEstimate:
    """Minimum-distance estimate with its sandwich variance.

    ``J`` is the asymptotic variance of ``sqrt(T) (theta - theta0)``; use
    :attr:`cov` (``J / T``) for standard errors.
    """

    theta: np.ndarray
    J: np.ndarray
    regime: Regime
    weight: WeightSpec
    weight_matrix: np.ndarray
    T: int
    design: DesignMatrix
    clipped: int = 0

    @property
    def cov(self) -> np.ndarray:
        return self.J / self.T

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def contrast_se(self, c) -> float:
        c = np.asarray(c, dtype=float)
        return float(np.sqrt(max(c @ self.cov @ c, 0.0)))


def _target(moments: MomentSet, regime: Regime) -> np.ndarray:
    return kalg.vech(moments.log_target(regime))


def md_estimate(moments: MomentSet, design, weight: WeightSpec | None = None,
                regime: Regime = Regime.ESTIMATED_D, v_kind: str = "empirical") -> MdEstimate:
    """Minimum-distance estimate ``(E'WE)^{-1} E'W vech(log Theta_hat)``.

    Parameters
    ----------
    moments : MomentSet
    design : DesignMatrix or dims
    weight : WeightSpec, optional
        Identity by default. ``optimal`` uses the clipped pseudo-inverse of
        the ``S`` matrix for ``regime``.
    regime : Regime
        Estimated variances (default) or known ones (``moments.d_known``).
    v_kind : {"empirical", "gaussian"}
        Fourth-moment matrix used for ``J`` and for the optimal weight.

    Raises
    ------
    SingularNormalEquations
        When ``E'WE`` is numerically singular.
    """
    design = build_design(design)
    regime = Regime(regime)
    weight = weight or WeightSpec.identity()
    if moments.n != design.n:
        raise DimensionMismatch(f"moments have n={moments.n}, design has n={design.n}")
    w, clipped = resolve_weight(weight, moments, design, regime, v_kind)
    ls = _solve(design.E, w, _target(moments, regime))
    J = _sandwich(ls.proj, moments, regime, v_kind)
    return MdEstimate(ls.theta, J, regime, weight, w, moments.T, design, clipped)


def _sandwich(proj: np.ndarray, moments: MomentSet, regime: Regime, v_kind: str) -> np.ndarray:
    n = moments.n
    g = proj @ kalg.duplication_pinv(n) @ moments.jacobian(regime)
    J = g @ moments.v_matrix(v_kind) @ g.T
    return 0.5 * (J + J.T)


def md_variance(moments: MomentSet, design, weight: WeightSpec | None = None,
                regime: Regime = Regime.ESTIMATED_D, v_kind: str = "empirical") -> np.ndarray:
    """Sandwich variance ``J`` of the minimum-distance estimator.

    ``J = B E'W D_n^+ C V C' D_n^+' W E B`` with ``B = (E'WE)^{-1}`` and
    ``C`` the correlation Jacobian of the regime (``P`` dropped when ``D``
    is known).
    """
    design = build_design(design)
    regime = Regime(regime)
    weight = weight or WeightSpec.identity()
    w, _ = resolve_weight(weight, moments, design, regime, v_kind)
    ls = _solve(design.E, w, np.zeros(design.n_moments))
    return _sandwich(ls.proj, moments, regime, v_kind)
