"""Kronecker and half-vectorization algebra.

Conventions used throughout the package:

* ``vec`` stacks columns (Fortran order).
* ``vech`` stacks the on-and-below-diagonal part column by column, so for a
  2 x 2 matrix ``[[a, b], [b, d]]`` it returns ``(a, b, d)``.

The selector matrices are small at the sizes this package targets, so they
are built densely once per ``n`` and cached as read-only arrays. All their
entries (0, 1/2, 1) are exact in binary floating point.
"""

from __future__ import annotations

import functools

import numpy as np

from .errors import DimensionMismatch

__all__ = [
    "commutation",
    "diag_select",
    "duplication",
    "duplication_pinv",
    "kron",
    "kron_all",
    "unvec",
    "unvech",
    "vec",
    "vech",
    "vech_dim",
    "vech_indices",
]


def vech_dim(n: int) -> int:
    return n * (n + 1) // 2


def _n_from_vech(k: int) -> int:
    n = int(round((np.sqrt(8 * k + 1) - 1) / 2))
    if vech_dim(n) != k:
        raise DimensionMismatch(f"length {k} is not a triangular number")
    return n


@functools.lru_cache(maxsize=None)
def vech_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the vech entries, in vech order."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    r = np.array(rows, dtype=np.intp)
    c = np.array(cols, dtype=np.intp)
    r.flags.writeable = False
    c.flags.writeable = False
    return r, c


def vec(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise DimensionMismatch(f"vec expects a matrix, got ndim={m.ndim}")
    return m.reshape(-1, order="F")


def unvec(x, n: int | None = None) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise DimensionMismatch("unvec expects a vector")
    if n is None:
        n = int(round(np.sqrt(x.size)))
    if x.size % n:
        raise DimensionMismatch(f"length {x.size} is not a multiple of {n}")
    return x.reshape((n, x.size // n), order="F")


def vech(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"vech expects a square matrix, got shape {m.shape}")
    r, c = vech_indices(m.shape[0])
    return m[r, c]


def unvech(x) -> np.ndarray:
    """Symmetric matrix whose vech is ``x``."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise DimensionMismatch("unvech expects a vector")
    n = _n_from_vech(x.size)
    r, c = vech_indices(n)
    out = np.zeros((n, n), dtype=x.dtype)
    out[r, c] = x
    out[c, r] = x
    return out


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@functools.lru_cache(maxsize=None)
def duplication(n: int) -> np.ndarray:
    """D_n with ``vec(M) = D_n @ vech(M)`` for symmetric ``M``; shape n^2 x n(n+1)/2."""
    r, c = vech_indices(n)
    d = np.zeros((n * n, vech_dim(n)))
    k = np.arange(r.size)
    d[c * n + r, k] = 1.0
    d[r * n + c, k] = 1.0
    return _frozen(d)


@functools.lru_cache(maxsize=None)
def duplication_pinv(n: int) -> np.ndarray:
    """Moore-Penrose inverse ``(D'D)^{-1} D'``; rows average the two mirrored entries."""
    d = duplication(n)
    counts = d.sum(axis=0)
    return _frozen(d.T / counts[:, None])


@functools.lru_cache(maxsize=None)
def commutation(n: int) -> np.ndarray:
    """K_{n,n} with ``K @ vec(M) = vec(M.T)``."""
    i, j = np.divmod(np.arange(n * n), n)
    k = np.zeros((n * n, n * n))
    # vec(M)[j*n+i] = M[i, j] and vec(M.T)[i*n+j] = M[i, j]
    k[i * n + j, j * n + i] = 1.0
    return _frozen(k)


@functools.lru_cache(maxsize=None)
def diag_select(n: int) -> np.ndarray:
    """M_d = sum_i (e_i e_i') kron (e_i e_i'); keeps the diagonal entries of vec(M)."""
    m = np.zeros(n * n)
    m[np.arange(n) * (n + 1)] = 1.0
    return _frozen(np.diag(m))


def kron(a, b) -> np.ndarray:
    return np.kron(np.asarray(a), np.asarray(b))


def kron_all(mats) -> np.ndarray:
    """Left-to-right Kronecker product of a non-empty sequence."""
    mats = list(mats)
    if not mats:
        raise DimensionMismatch("kron_all needs at least one matrix")
    out = np.asarray(mats[0], dtype=float)
    for m in mats[1:]:
        out = np.kron(out, np.asarray(m, dtype=float))
    return out
