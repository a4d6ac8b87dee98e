"""Fourth-order finite-difference stencils on uniform grids.

Edges either carry two ghost layers (reflection symmetry) and get
centered stencils, or are handled with one-sided stencils.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

GHOSTS = 2


@lru_cache(maxsize=None)
def stencil_weights(offsets: tuple, order: int) -> np.ndarray:
    """Weights w with sum_k w_k f(x + k h) ~ h**order f^(order)(x)."""
    k = np.asarray(offsets, dtype=float)
    n = len(k)
    vander = np.vander(k, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(vander, rhs)


def _window(j: int, m: int, order: int) -> tuple:
    if j - 2 >= 0 and j + 2 <= m - 1:
        return tuple(range(-2, 3))
    size = 5 if order == 1 else 6
    start = min(max(j - 2, 0), m - size)
    return tuple(range(start - j, start - j + size))


@lru_cache(maxsize=None)
def diff_matrix(n: int, h: float, order: int, pad_lo: int = 0, pad_hi: int = 0) -> np.ndarray:
    """Dense (n, n + pad_lo + pad_hi) derivative matrix acting on a padded axis."""
    m = n + pad_lo + pad_hi
    out = np.zeros((n, m))
    for i in range(n):
        j = i + pad_lo
        offs = _window(j, m, order)
        w = stencil_weights(offs, order) / h**order
        for o, wk in zip(offs, w):
            out[i, j + o] = wk
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def fold_matrix(n: int, lo_parity, hi_parity) -> np.ndarray:
    """Map core values to a padded axis with even/odd reflection ghosts.

    ``lo_parity``/``hi_parity`` are +1, -1 or None (no ghosts).
    """
    pad_lo = GHOSTS if lo_parity is not None else 0
    pad_hi = GHOSTS if hi_parity is not None else 0
    out = np.zeros((n + pad_lo + pad_hi, n))
    out[pad_lo:pad_lo + n, :] = np.eye(n)
    for k in range(1, pad_lo + 1):
        out[pad_lo - k, k] = lo_parity
    for k in range(1, pad_hi + 1):
        out[pad_lo + n - 1 + k, n - 1 - k] = hi_parity
    out.setflags(write=False)
    return out


def apply_axis(mat: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``mat`` with ``arr`` along ``axis``, keeping axis order."""
    moved = np.moveaxis(arr, axis, 0)
    out = np.tensordot(mat, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def pad_reflect(arr: np.ndarray, axis: int, lo, hi) -> np.ndarray:
    """Append reflected ghost layers along ``axis`` of a vector field.

    ``lo``/``hi`` are 3x3 reflection matrices or None. The edge node is
    the mirror point, so ghost ``-k`` is the reflection of node ``k``.
    """
    parts = []
    if lo is not None:
        idx = [slice(None)] * arr.ndim
        idx[axis] = slice(GHOSTS, 0, -1)
        parts.append(arr[tuple(idx)] @ np.asarray(lo).T)
    parts.append(arr)
    if hi is not None:
        n = arr.shape[axis]
        idx = [slice(None)] * arr.ndim
        idx[axis] = slice(n - 2, n - 2 - GHOSTS, -1)
        parts.append(arr[tuple(idx)] @ np.asarray(hi).T)
    return np.concatenate(parts, axis=axis)


def pad_scalar(arr: np.ndarray, axis: int, lo_parity, hi_parity) -> np.ndarray:
    fold = fold_matrix(arr.shape[axis], lo_parity, hi_parity)
    return apply_axis(fold, arr, axis)


def sparse_axis_operator(n0: int, n1: int, mat0=None, mat1=None) -> sp.csr_matrix:
    """Kronecker operator on row-major (n0, n1) fields from 1D matrices."""
    a = sp.csr_matrix(mat0) if mat0 is not None else sp.identity(n0, format="csr")
    b = sp.csr_matrix(mat1) if mat1 is not None else sp.identity(n1, format="csr")
    return sp.kron(a, b, format="csr")
