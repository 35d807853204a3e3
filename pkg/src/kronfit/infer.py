"""Contrast inference (intervals and joint Wald tests) and the over-identification test.

Over-identification with estimated variances
--------------------------------------------
When ``D`` is estimated, the sample correlation has a unit diagonal, so
``vech(log Theta_hat)`` fluctuates only along the ``n(n-1)/2`` correlation
directions and ``S`` has that rank. The test is then run on the
correlation-preserving part of the model: starting from the renormalized fit
``theta_c`` (whose ``exp(Omega)`` is an exact Kronecker correlation matrix),
the residual is minimized over the directions ``delta`` that keep
``diag(exp(Omega))`` fixed to first order, in the ``S^+`` metric. The
statistic is asymptotically chi-squared with
``rank(S) - rank(S^+ E L)`` degrees of freedom, ``L`` spanning those
directions. With known ``D``, ``S`` is invertible and the textbook statistic
at ``W = S^{-1}`` with ``n(n+1)/2 - s`` degrees of freedom is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special

from . import kalg
from .design import DesignMatrix, build_design, factors_to_theta, theta_to_factor_logs
from .errors import NotOveridentified, RankDeficientContrast
from .matfun import frechet_apply, spd_exp
from .mdest import MdEstimate, WeightSpec, clipped_pinv, md_estimate
from .moments import MomentSet, Regime

__all__ = [
    "EstimateReport",
    "TestResult",
    "WaldResult",
    "chi2_sf",
    "contrast_interval",
    "normal_sf",
    "overid_test",
    "s_matrix",
    "wald_joint",
]


def chi2_sf(x: float, df: float) -> float:
    """Upper tail ``P(chi2_df > x)`` via the regularized upper incomplete gamma."""
    if df <= 0:
        raise ValueError(f"df must be positive, got {df}")
    if x <= 0:
        return 1.0
    return float(scipy.special.gammaincc(0.5 * df, 0.5 * x))


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal, ``erfc(z / sqrt 2) / 2``."""
    return float(0.5 * scipy.special.erfc(z / np.sqrt(2.0)))


def s_matrix(moments: MomentSet, regime: Regime = Regime.ESTIMATED_D,
             v_kind: str = "empirical") -> np.ndarray:
    """Asymptotic variance of ``sqrt(T) vech(log Theta_hat)``.

    ``S = D_n^+ C V C' D_n^+'`` where ``C`` is the correlation Jacobian of
    the regime.
    """
    regime = Regime(regime)
    g = kalg.duplication_pinv(moments.n) @ moments.jacobian(regime)
    s = g @ moments.v_matrix(v_kind) @ g.T
    return 0.5 * (s + s.T)


@dataclass(frozen=True)
class TestResult:
    """Over-identification test outcome.

    ``p_normal`` is the upper tail of ``z_diag = (statistic - df) / sqrt(2 df)``;
    ``p_normal_two_sided`` is reported alongside. ``clipped`` counts the
    eigenvalues of ``S`` dropped by the pseudo-inverse.
    """

    statistic: float
    df: int
    p_chi2: float
    z_diag: float
    p_normal: float
    p_normal_two_sided: float
    regime: str
    clipped: int = 0
    theta: np.ndarray | None = field(default=None, compare=False)

    def reject(self, alpha: float = 0.05) -> bool:
        return self.p_chi2 < alpha


def _result(stat: float, df: int, regime: Regime, clipped: int, theta) -> TestResult:
    stat = max(float(stat), 0.0)
    z = (stat - df) / np.sqrt(2.0 * df)
    return TestResult(
        statistic=stat,
        df=int(df),
        p_chi2=chi2_sf(stat, df),
        z_diag=float(z),
        p_normal=normal_sf(z),
        p_normal_two_sided=2.0 * normal_sf(abs(z)),
        regime=regime.value,
        clipped=clipped,
        theta=theta,
    )


def overid_test(md: MdEstimate | None, moments: MomentSet, design=None,
                regime: Regime | None = None, v_kind: str = "empirical") -> TestResult:
    """Over-identification test of the Kronecker structure.

    The estimate is recomputed at the optimal weight whatever weight ``md``
    used; ``md`` supplies the regime (and a design) when they are not given.

    Raises
    ------
    NotOveridentified
        When the model has no over-identifying restrictions.
    """
    if design is None:
        design = md.design
    design = build_design(design)
    if regime is None:
        regime = md.regime if md is not None else Regime.ESTIMATED_D
    regime = Regime(regime)
    if design.df <= 0:
        raise NotOveridentified(
            f"dims {design.dims} give {design.n_moments} moments for {design.s} parameters"
        )
    if regime is Regime.KNOWN_D:
        return _overid_known(moments, design, v_kind)
    return _overid_estimated(moments, design, v_kind)


def _overid_known(moments: MomentSet, design: DesignMatrix, v_kind: str) -> TestResult:
    regime = Regime.KNOWN_D
    s = s_matrix(moments, regime, v_kind)
    w, clipped = clipped_pinv(s)
    est = md_estimate(moments, design, WeightSpec.supplied(w), regime, v_kind)
    g = kalg.vech(moments.log_target(regime)) - design.E @ est.theta
    stat = moments.T * g @ w @ g
    return _result(stat, design.df - clipped, regime, clipped, est.theta)


def renormalized_theta(design: DesignMatrix, theta) -> np.ndarray:
    """Parameters of the Kronecker correlation matrix closest in scale to ``exp(Omega(theta))``.

    Each factor ``exp(log Theta_j)`` is rescaled to a unit diagonal; the
    Kronecker product of the rescaled factors is ``exp(Omega)`` with its
    diagonal divided out.
    """
    factors = []
    for lg in theta_to_factor_logs(design, theta):
        f = spd_exp(lg).array
        r = 1.0 / np.sqrt(np.diag(f))
        c = f * np.outer(r, r)
        np.fill_diagonal(c, 1.0)
        factors.append(c)
    return factors_to_theta(design, factors)


def _null_space(a: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    u, sv, vt = np.linalg.svd(a)
    rank = int(np.count_nonzero(sv > rtol * max(sv[0], 1e-300))) if sv.size else 0
    return vt[rank:].T


def _overid_estimated(moments: MomentSet, design: DesignMatrix, v_kind: str) -> TestResult:
    regime = Regime.ESTIMATED_D
    n = design.n
    s = s_matrix(moments, regime, v_kind)
    w, clipped = clipped_pinv(s)
    rank_s = s.shape[0] - clipped
    first = md_estimate(moments, design, WeightSpec.identity(), regime, v_kind)
    theta_c = renormalized_theta(design, first.theta)
    theta_mat = spd_exp(kalg.unvech(design.E @ theta_c))
    # first-order change of diag(exp(Omega)) along each parameter
    dup = kalg.duplication(n)
    g_diag = np.empty((n, design.s))
    for k in range(design.s):
        dm = kalg.unvec(dup @ design.E[:, k], n)
        g_diag[:, k] = np.diag(frechet_apply(theta_mat, dm, "psi"))
    basis = _null_space(g_diag)
    z = kalg.vech(moments.log_target(regime)) - design.E @ theta_c
    x = design.E @ basis
    root = _psd_root(w)
    a = root.T @ x
    q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    k = int(np.count_nonzero(diag > 1e-10 * max(diag[0], 1e-300))) if diag.size else 0
    b = root.T @ z
    resid = b - q[:, :k] @ (q[:, :k].T @ b)
    stat = moments.T * float(resid @ resid)
    df = rank_s - k
    if df <= 0:
        raise NotOveridentified("no correlation restrictions are left to test")
    coef = np.zeros(basis.shape[1])
    if k:
        sol = scipy.linalg.solve_triangular(r[:k, :k], q[:, :k].T @ b)
        coef[piv[:k]] = sol
    return _result(stat, df, regime, clipped, theta_c + basis @ coef)


def _psd_root(w: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(w)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float


def wald_joint(est, A, r=None) -> WaldResult:
    """Joint Wald test of ``A' theta = r`` using the estimate's covariance.

    ``est`` is an :class:`MdEstimate` or a one-step estimate (anything with
    ``theta`` and ``cov``). ``A`` is ``s x k`` with full column rank.

    Raises
    ------
    RankDeficientContrast
        If ``A`` or ``A' cov A`` is rank deficient.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    s, k = A.shape
    theta = np.asarray(est.theta, dtype=float)
    if s != theta.size:
        raise RankDeficientContrast(f"A has {s} rows, theta has {theta.size} entries")
    if np.linalg.matrix_rank(A) < k:
        raise RankDeficientContrast(f"contrast matrix has rank < {k}")
    r = np.zeros(k) if r is None else np.asarray(r, dtype=float).reshape(k)
    m = A.T @ est.cov @ A
    m = 0.5 * (m + m.T)
    vals = np.linalg.eigvalsh(m)
    if not vals[0] > 1e-12 * max(vals[-1], 1e-300):
        raise RankDeficientContrast("A' cov A is not positive definite")
    diff = A.T @ theta - r
    stat = float(diff @ np.linalg.solve(m, diff))
    return WaldResult(stat, k, chi2_sf(stat, k))


def contrast_interval(est, c, level: float = 0.95) -> tuple[float, float, float, float]:
    """Point estimate, standard error and two-sided interval for ``c' theta``."""
    c = np.asarray(c, dtype=float)
    point = float(c @ est.theta)
    se = float(np.sqrt(max(c @ est.cov @ c, 0.0)))
    z = float(np.sqrt(2.0) * scipy.special.erfinv(level))
    return point, se, point - z * se, point + z * se


@dataclass(frozen=True)
class EstimateReport:
    """Point estimates with per-parameter standard errors and 95% intervals."""

    labels: tuple[str, ...]
    md_theta: np.ndarray
    md_se: np.ndarray
    onestep_theta: np.ndarray | None = None
    onestep_se: np.ndarray | None = None

    @classmethod
    def build(cls, md: MdEstimate, onestep=None) -> "EstimateReport":
        return cls(
            tuple(md.design.labels()),
            md.theta,
            md.se,
            None if onestep is None else onestep.theta,
            None if onestep is None else onestep.se,
        )

    def rows(self, level: float = 0.95) -> list[dict]:
        z = float(np.sqrt(2.0) * scipy.special.erfinv(level))
        out = []
        for i, name in enumerate(self.labels):
            row = {
                "parameter": name,
                "md": float(self.md_theta[i]),
                "md_se": float(self.md_se[i]),
                "md_lo": float(self.md_theta[i] - z * self.md_se[i]),
                "md_hi": float(self.md_theta[i] + z * self.md_se[i]),
            }
            if self.onestep_theta is not None:
                row.update(
                    onestep=float(self.onestep_theta[i]),
                    onestep_se=float(self.onestep_se[i]),
                    onestep_lo=float(self.onestep_theta[i] - z * self.onestep_se[i]),
                    onestep_hi=float(self.onestep_theta[i] + z * self.onestep_se[i]),
                )
            out.append(row)
        return out
