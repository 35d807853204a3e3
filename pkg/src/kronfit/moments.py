"""Sample moments of a panel and the pieces that carry them into log-correlation space.

``V`` is the variance of ``vec(y y')`` (the asymptotic variance of
``sqrt(T) vec(Sigma_hat - Sigma)``), indexed so that row ``i*n + j`` and
column ``k*n + l`` (0-based) hold ``V_{ijkl}``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kalg
from .errors import DataError, DimensionMismatch, NumericalError, SingularCovariance
from .matfun import SpdMatrix, h_operator, jacobi_eigh

__all__ = [
    "MomentSet",
    "Panel",
    "Regime",
    "compute_moments",
    "correlation_jacobian",
    "gaussian_v",
    "p_matrix",
]

COV_FLOOR_RTOL = 1e-10


class Regime(str, enum.Enum):
    """Whether the variances ``D`` are estimated from the data or known."""

    ESTIMATED_D = "estimated-d"
    KNOWN_D = "known-d"


@dataclass(frozen=True, eq=False)
class Panel:
    """``T x n`` data matrix, rows are time points, columns are series."""

    data: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        a = np.array(self.data, dtype=float)
        if a.ndim != 2:
            raise DimensionMismatch(f"panel data must be 2-D, got ndim={a.ndim}")
        T, n = a.shape
        if T < 2 or n < 2:
            raise DimensionMismatch(f"panel needs T >= 2 and n >= 2, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DataError("panel contains non-finite values")
        if self.names is not None and len(self.names) != n:
            raise DimensionMismatch(f"{len(self.names)} names for {n} series")
        a.flags.writeable = False
        object.__setattr__(self, "data", a)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Sample moments used by the estimators.

    Attributes
    ----------
    T : int
        Number of observations.
    mean : ndarray
        Sample mean, or the known mean if one was supplied.
    sigma : SpdMatrix
        Second moment about ``mean`` with divisor ``T``.
    d : ndarray
        ``diag(sigma)``.
    theta : SpdMatrix
        Sample correlation ``D^{-1/2} sigma D^{-1/2}`` (unit diagonal).
    v : ndarray
        ``n^2 x n^2`` fourth-moment matrix.
    d_known : ndarray or None
        True variances, when the known-``D`` regime is wanted.
    """

    T: int
    mean: np.ndarray
    sigma: SpdMatrix
    d: np.ndarray
    theta: SpdMatrix
    v: np.ndarray
    d_known: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.sigma.dim

    def with_known_d(self, d_known) -> "MomentSet":
        d_known = _positive_vector(d_known, self.n)
        return MomentSet(self.T, self.mean, self.sigma, self.d, self.theta, self.v, d_known)

    def scale(self, regime: Regime) -> np.ndarray:
        """Variances used to standardize ``sigma`` under ``regime``."""
        regime = Regime(regime)
        if regime is Regime.ESTIMATED_D:
            return self.d
        if self.d_known is None:
            raise DataError("the known-D regime needs d_known")
        return self.d_known

    def target(self, regime: Regime) -> SpdMatrix:
        """``D^{-1/2} sigma D^{-1/2}`` with ``D`` chosen by ``regime``.

        Equals :attr:`theta` in the estimated-``D`` regime.
        """
        regime = Regime(regime)
        if regime is Regime.ESTIMATED_D:
            return self.theta
        key = ("target", regime)
        if key not in self._cache:
            r = 1.0 / np.sqrt(self.scale(regime))
            self._cache[key] = SpdMatrix(self.sigma.array * np.outer(r, r))
        return self._cache[key]

    def log_target(self, regime: Regime) -> np.ndarray:
        key = ("log", Regime(regime))
        if key not in self._cache:
            t = self.target(regime)
            a = t.apply(np.log)
            a.flags.writeable = False
            self._cache[key] = a
        return self._cache[key]

    def jacobian(self, regime: Regime) -> np.ndarray:
        """:func:`correlation_jacobian` evaluated at these moments."""
        key = ("jac", Regime(regime))
        if key not in self._cache:
            regime = Regime(regime)
            j = correlation_jacobian(
                self.target(regime), self.scale(regime), with_p=regime is Regime.ESTIMATED_D
            )
            j.flags.writeable = False
            self._cache[key] = j
        return self._cache[key]

    def v_matrix(self, kind: str = "empirical") -> np.ndarray:
        """The fourth-moment matrix: empirical ``v`` or the Gaussian form."""
        if kind == "empirical":
            return self.v
        if kind == "gaussian":
            return gaussian_v(self.sigma)
        raise ValueError(f"unknown V kind {kind!r}")

    @classmethod
    def population(cls, sigma, T: int = 1, v=None, d_known=None, mean=None) -> "MomentSet":
        """Moments equal to population values (Gaussian ``V`` unless given)."""
        s = sigma if isinstance(sigma, SpdMatrix) else SpdMatrix(sigma)
        d = np.diag(s.array).copy()
        r = 1.0 / np.sqrt(d)
        corr = s.array * np.outer(r, r)
        np.fill_diagonal(corr, 1.0)
        v = gaussian_v(s) if v is None else np.asarray(v, dtype=float)
        n = s.dim
        mean = np.zeros(n) if mean is None else np.asarray(mean, dtype=float)
        dk = None if d_known is None else _positive_vector(d_known, n)
        return cls(int(T), mean, s, d, SpdMatrix(corr), v, dk)


def _positive_vector(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise DimensionMismatch(f"expected {n} variances, got {x.shape}")
    if not np.all(x > 0):
        raise DataError("variances must be strictly positive")
    return x


def gaussian_v(sigma) -> np.ndarray:
    """``2 D_n D_n^+ (Sigma kron Sigma)``, the fourth-moment matrix under normality."""
    s = np.asarray(sigma.array if isinstance(sigma, SpdMatrix) else sigma, dtype=float)
    n = s.shape[0]
    v = 2.0 * kalg.duplication(n) @ (kalg.duplication_pinv(n) @ np.kron(s, s))
    return 0.5 * (v + v.T)


def p_matrix(theta) -> np.ndarray:
    """``I - D_n D_n^+ (I kron Theta) M_d``.

    Maps ``vec`` of a standardized covariance perturbation to the induced
    correlation perturbation.
    """
    t = np.asarray(theta.array if isinstance(theta, SpdMatrix) else theta, dtype=float)
    n = t.shape[0]
    dd = kalg.duplication(n) @ kalg.duplication_pinv(n)
    return np.eye(n * n) - dd @ np.kron(np.eye(n), t) @ kalg.diag_select(n)


def correlation_jacobian(theta, d, with_p: bool = True) -> np.ndarray:
    """``H(Theta) P (D^{-1/2} kron D^{-1/2})``: derivative of ``vec log Theta`` in ``vec Sigma``.

    With ``with_p=False`` the variances are treated as fixed and ``P`` is dropped.
    """
    t = theta if isinstance(theta, SpdMatrix) else SpdMatrix(theta)
    r = 1.0 / np.sqrt(np.asarray(d, dtype=float))
    scale = np.kron(r, r)
    left = h_operator(t)
    if with_p:
        left = left @ p_matrix(t)
    return left * scale[None, :]


def _fourth_moment(centered: np.ndarray, sigma: np.ndarray, chunk: int) -> np.ndarray:
    T, n = centered.shape
    base = sigma.reshape(-1, order="F")
    v = np.zeros((n * n, n * n))
    for start in range(0, T, chunk):
        c = centered[start:start + chunk]
        # row t holds vec(y_t y_t') - vec(sigma)
        u = (c[:, None, :] * c[:, :, None]).reshape(c.shape[0], -1) - base
        v += u.T @ u
    v /= T
    return 0.5 * (v + v.T)


def compute_moments(panel: Panel, mu=None, floor_rtol: float = COV_FLOOR_RTOL,
                    chunk: int = 4096) -> MomentSet:
    """Mean, covariance, correlation and fourth moments of ``panel``.

    Parameters
    ----------
    panel : Panel
    mu : array_like, optional
        Known mean. By default the sample mean is used for centering.
    floor_rtol : float
        The covariance is rejected as singular when its smallest eigenvalue
        is at most ``floor_rtol * trace / n``.
    chunk : int
        Rows per block in the fourth-moment accumulation; results depend on
        it only through floating-point summation order.

    Raises
    ------
    SingularCovariance
    """
    y = panel.data
    T, n = y.shape
    mean = y.mean(axis=0) if mu is None else np.asarray(mu, dtype=float).reshape(n)
    c = y - mean
    sigma = c.T @ c / T
    sigma = 0.5 * (sigma + sigma.T)
    floor = floor_rtol * np.trace(sigma) / n
    w, q = jacobi_eigh(sigma)
    if not w[0] > floor:
        raise SingularCovariance(float(w[0]), float(floor))
    sig = SpdMatrix.from_eig(w, q)
    d = np.diag(sigma).copy()
    r = 1.0 / np.sqrt(d)
    corr = sigma * np.outer(r, r)
    np.fill_diagonal(corr, 1.0)
    try:
        theta = SpdMatrix(corr)
    except NumericalError:
        raise SingularCovariance(float(w[0]), float(floor)) from None
    v = _fourth_moment(c, sigma, chunk)
    return MomentSet(T, mean, sig, d, theta, v)
