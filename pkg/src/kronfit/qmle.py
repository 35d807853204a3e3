"""Gaussian quasi-likelihood in the log-correlation parameters and the one-step update.

With ``A = D^{-1/2} Sigma_tilde D^{-1/2}`` the likelihood (up to constants) is

    l(theta) = -(T/2) tr(Omega) - (T/2) tr(A exp(-Omega)),  Omega = Omega(theta),

because ``log det exp(Omega) = tr(Omega)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kalg
from .design import DesignMatrix, build_design, theta_to_omega
from .errors import DimensionMismatch, HessianNotPd
from .matfun import SpdMatrix, frechet_apply, jacobi_eigh, xi_operator
from .mdest import MdEstimate
from .moments import MomentSet, Regime

__all__ = [
    "LikelihoodContext",
    "OneStepEstimate",
    "loglik",
    "one_step",
    "score",
    "upsilon",
    "upsilon_fisher_form",
]


@dataclass(frozen=True, eq=False)
class LikelihoodContext:
    """Data entering the quasi-likelihood: design, variances ``d``, ``A`` and ``T``."""

    design: DesignMatrix
    d: np.ndarray
    a_matrix: SpdMatrix
    T: int

    def __post_init__(self):
        object.__setattr__(self, "design", build_design(self.design))
        a = self.a_matrix if isinstance(self.a_matrix, SpdMatrix) else SpdMatrix(self.a_matrix)
        object.__setattr__(self, "a_matrix", a)
        if a.dim != self.design.n:
            raise DimensionMismatch(f"A is {a.dim} x {a.dim}, design has n={self.design.n}")

    @classmethod
    def from_moments(cls, moments: MomentSet, design, regime: Regime = Regime.KNOWN_D):
        """Context with ``A`` the standardized second moment of ``moments``."""
        regime = Regime(regime)
        return cls(build_design(design), moments.scale(regime), moments.target(regime), moments.T)


def _exp_parts(design: DesignMatrix, theta) -> tuple[SpdMatrix, np.ndarray]:
    omega = theta_to_omega(design, theta)
    w, q = jacobi_eigh(omega)
    big = SpdMatrix.from_eig(np.exp(w), q)
    inv = (q * np.exp(-w)) @ q.T
    return big, 0.5 * (inv + inv.T)


def loglik(ctx: LikelihoodContext, theta) -> float:
    """Quasi log-likelihood at ``theta`` (constants dropped)."""
    omega = theta_to_omega(ctx.design, theta)
    w, q = jacobi_eigh(omega)
    inv = (q * np.exp(-w)) @ q.T
    return float(-0.5 * ctx.T * (np.sum(w) + np.sum(ctx.a_matrix.array * inv)))


def score(ctx: LikelihoodContext, theta) -> np.ndarray:
    """Gradient ``(T/2) E' D_n' Psi vec(e^{-Omega} A e^{-Omega} - e^{-Omega})``."""
    big, inv = _exp_parts(ctx.design, theta)
    m = inv @ ctx.a_matrix.array @ inv - inv
    m = 0.5 * (m + m.T)
    g = frechet_apply(big, m, "psi")
    n = ctx.design.n
    return 0.5 * ctx.T * (ctx.design.E.T @ (kalg.duplication(n).T @ kalg.vec(g)))


def upsilon(design, theta) -> np.ndarray:
    """Expected negative Hessian per observation, ``(1/2) E' D_n' Xi D_n E``."""
    design = build_design(design)
    big, _ = _exp_parts(design, theta)
    de = kalg.duplication(design.n) @ design.E
    u = 0.5 * de.T @ xi_operator(big) @ de
    return 0.5 * (u + u.T)


def upsilon_fisher_form(design, theta) -> np.ndarray:
    """The same matrix as ``(1/2) E' D_n' Psi (Theta^{-1} kron Theta^{-1}) Psi D_n E``."""
    from .matfun import psi_operator

    design = build_design(design)
    big, inv = _exp_parts(design, theta)
    psi = psi_operator(big)
    de = kalg.duplication(design.n) @ design.E
    u = 0.5 * de.T @ psi @ np.kron(inv, inv) @ psi @ de
    return 0.5 * (u + u.T)


@dataclass(frozen=True, eq=False)
class OneStepEstimate:
    """One Newton-type step from a minimum-distance start.

    ``variance`` is ``upsilon^{-1} / T``, the estimated covariance of ``theta_tilde``.
    """

    theta_tilde: np.ndarray
    upsilon: np.ndarray
    variance: np.ndarray
    start: np.ndarray
    T: int

    @property
    def theta(self) -> np.ndarray:
        return self.theta_tilde

    @property
    def cov(self) -> np.ndarray:
        return self.variance

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.variance))

    def contrast_se(self, c) -> float:
        c = np.asarray(c, dtype=float)
        return float(np.sqrt(c @ self.variance @ c))


def one_step(md: MdEstimate | np.ndarray, ctx: LikelihoodContext) -> OneStepEstimate:
    """One Fisher-scoring step ``theta_tilde = theta_hat + upsilon^{-1} score / T``.

    ``upsilon`` is the positive definite ``-E[Hessian] / T``, so the step
    moves uphill in the likelihood; written with the Hessian itself it is the
    usual Newton step ``theta_hat - Hessian^{-1} score``.

    Raises
    ------
    HessianNotPd
        If ``upsilon`` at the start is not positive definite; no repair is attempted.
    """
    start = np.asarray(md.theta if isinstance(md, MdEstimate) else md, dtype=float)
    ups = upsilon(ctx.design, start)
    w, q = np.linalg.eigh(ups)
    if not w[0] > 1e-12 * max(abs(w[-1]), 1e-300):
        raise HessianNotPd(float(w[0]))
    inv = (q / w) @ q.T
    inv = 0.5 * (inv + inv.T)
    step = inv @ score(ctx, start) / ctx.T
    return OneStepEstimate(start + step, ups, inv / ctx.T, start, ctx.T)
