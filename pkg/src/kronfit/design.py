"""Kronecker factor structure and the design matrix of free log-parameters.

For factor dimensions ``(n_1, ..., n_v)`` the log-correlation matrix is the
Kronecker sum ``Omega = sum_j I x ... x log(Theta_j) x ... x I``. The free
parameters are the vech entries of every ``log(Theta_j)`` except the (1,1)
entry of factors ``1..v-1``, which is pinned to zero: adding ``c*I`` to one
factor log and subtracting it from another leaves ``Omega`` unchanged, and
those ``v - 1`` pins remove exactly that freedom.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import kalg
from .errors import DimensionMismatch
from .matfun import SpdMatrix, spd_exp, spd_log

DEFAULT_DIM_CAP = 512


@dataclass(frozen=True)
class FactorDims:
    """Ordered factor dimensions; ``n`` is their product."""

    dims: tuple[int, ...]
    cap: int = field(default=DEFAULT_DIM_CAP, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise DimensionMismatch("at least one factor is required")
        if any(d < 2 for d in dims):
            raise DimensionMismatch(f"every factor dimension must be >= 2, got {dims}")
        if self.n > self.cap:
            raise DimensionMismatch(f"n = {self.n} exceeds the cap of {self.cap}")

    @classmethod
    def parse(cls, text: str, cap: int = DEFAULT_DIM_CAP) -> "FactorDims":
        """Parse ``"2x2x3"`` (also accepts ``*`` or ``,`` separators)."""
        parts = [p for p in re.split(r"[x*,\s]+", text.strip().lower()) if p]
        try:
            dims = tuple(int(p) for p in parts)
        except ValueError:
            raise DimensionMismatch(f"cannot parse factor dimensions from {text!r}") from None
        return cls(dims, cap=cap)

    @property
    def n(self) -> int:
        return math.prod(self.dims)

    @property
    def v(self) -> int:
        return len(self.dims)

    def __str__(self):
        return "x".join(str(d) for d in self.dims)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Design ``E`` with ``vech(Omega(theta)) = E @ theta``.

    ``params[k] = (factor, row, col)`` names column ``k`` (0-based, row >= col);
    ``restricted`` lists the pinned factor entries.
    """

    dims: FactorDims
    E: np.ndarray
    params: tuple[tuple[int, int, int], ...]
    restricted: tuple[tuple[int, int, int], ...]

    @property
    def s(self) -> int:
        return self.E.shape[1]

    @property
    def n(self) -> int:
        return self.dims.n

    @property
    def n_moments(self) -> int:
        return self.E.shape[0]

    @property
    def df(self) -> int:
        """Over-identifying restrictions, ``n(n+1)/2 - s``."""
        return self.n_moments - self.s

    @functools.cached_property
    def pinv(self) -> np.ndarray:
        p = np.linalg.pinv(self.E)
        p.flags.writeable = False
        return p

    def labels(self) -> list[str]:
        return [f"log_theta{j + 1}[{r + 1},{c + 1}]" for j, r, c in self.params]

    def blocks(self) -> list[np.ndarray]:
        """Column indices of ``theta`` belonging to each factor."""
        fac = np.array([p[0] for p in self.params])
        return [np.flatnonzero(fac == j) for j in range(self.dims.v)]


def _as_dims(dims) -> FactorDims:
    if isinstance(dims, DesignMatrix):
        return dims.dims
    if isinstance(dims, FactorDims):
        return dims
    if isinstance(dims, str):
        return FactorDims.parse(dims)
    return FactorDims(tuple(dims))


def _embed(dims: tuple[int, ...], j: int, block: np.ndarray) -> np.ndarray:
    left = math.prod(dims[:j])
    right = math.prod(dims[j + 1:])
    return np.kron(np.kron(np.eye(left), block), np.eye(right))


@functools.lru_cache(maxsize=32)
def _build(dims: tuple[int, ...], cap: int) -> DesignMatrix:
    fd = FactorDims(dims, cap=cap)
    v = fd.v
    cols, params, restricted = [], [], []
    for j, nj in enumerate(dims):
        rows, colsj = kalg.vech_indices(nj)
        for r, c in zip(rows.tolist(), colsj.tolist()):
            if r == 0 and c == 0 and j < v - 1:
                restricted.append((j, 0, 0))
                continue
            unit = np.zeros((nj, nj))
            unit[r, c] = unit[c, r] = 1.0
            cols.append(kalg.vech(_embed(dims, j, unit)))
            params.append((j, r, c))
    E = np.column_stack(cols)
    E.flags.writeable = False
    return DesignMatrix(fd, E, tuple(params), tuple(restricted))


def build_design(dims) -> DesignMatrix:
    """Design matrix for the given factor dimensions (cached per dims)."""
    if isinstance(dims, DesignMatrix):
        return dims
    fd = _as_dims(dims)
    return _build(fd.dims, fd.cap)


def diagonal_incidence(dims) -> np.ndarray:
    """0/1 system mapping all factor diagonal log-entries to diag(Omega).

    Columns are grouped by factor (``a_11, a_22, ..., b_11, ...``); row ``k``
    is the ``k``-th diagonal entry of the Kronecker sum.
    """
    fd = _as_dims(dims)
    offsets = np.concatenate([[0], np.cumsum(fd.dims)[:-1]])
    A = np.zeros((fd.n, sum(fd.dims)))
    for k, idx in enumerate(np.ndindex(*fd.dims)):
        for j, i in enumerate(idx):
            A[k, offsets[j] + i] = 1.0
    return A


def kronecker_sum(logs) -> np.ndarray:
    """``sum_j I x ... x L_j x ... x I`` for square ``L_j``."""
    logs = [np.asarray(x, dtype=float) for x in logs]
    dims = tuple(x.shape[0] for x in logs)
    return sum(_embed(dims, j, x) for j, x in enumerate(logs))


def theta_to_omega(design, theta) -> np.ndarray:
    """Symmetric ``Omega(theta) = unvech(E theta)``."""
    d = build_design(design)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d.s,):
        raise DimensionMismatch(f"theta must have length {d.s}, got shape {theta.shape}")
    return kalg.unvech(d.E @ theta)


def theta_to_factor_logs(design, theta) -> list[np.ndarray]:
    """Per-factor log matrices with the pinned entries at zero."""
    d = build_design(design)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d.s,):
        raise DimensionMismatch(f"theta must have length {d.s}, got shape {theta.shape}")
    logs = [np.zeros((nj, nj)) for nj in d.dims.dims]
    for value, (j, r, c) in zip(theta, d.params):
        logs[j][r, c] = logs[j][c, r] = value
    return logs


def omega_to_theta(design, omega) -> np.ndarray:
    """Least-squares coefficients ``E^+ vech(omega)``; exact for Kronecker sums."""
    d = build_design(design)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (d.n, d.n):
        raise DimensionMismatch(f"omega must be {d.n} x {d.n}, got {omega.shape}")
    return d.pinv @ kalg.vech(omega)


def omega_to_factors(design, omega) -> list[np.ndarray]:
    """Read the factor logs off ``omega`` (projection when it is not a Kronecker sum)."""
    d = build_design(design)
    return theta_to_factor_logs(d, omega_to_theta(d, omega))


def theta_to_correlation(design, theta) -> tuple[SpdMatrix, float]:
    """``Theta(theta) = exp(Omega(theta))`` and its largest ``|diag - 1|``.

    The result is SPD but need not have a unit diagonal; callers decide
    whether to renormalize.
    """
    m = spd_exp(theta_to_omega(design, theta))
    return m, float(np.max(np.abs(np.diag(m.array) - 1.0)))


def factors_to_theta(design, factors) -> np.ndarray:
    """Free parameters of ``Theta_1 x ... x Theta_v`` from SPD factors."""
    d = build_design(design)
    if tuple(np.shape(f)[0] for f in factors) != d.dims.dims:
        raise DimensionMismatch("factor shapes do not match the design")
    return omega_to_theta(d, kronecker_sum([spd_log(f) for f in factors]))
