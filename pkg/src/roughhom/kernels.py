"""Sparse trilinear form with a compiled core and a numpy fallback.

The compiled module is used when it imports and ``ROUGHHOM_PURE_PYTHON``
is unset.  The two paths agree to rounding, not bitwise.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse

try:
    if os.environ.get("ROUGHHOM_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure Python requested")
    from . import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "cython" if _ext is not None else "python"

__all__ = ["BACKEND", "TrilinearForm", "trilinear_apply", "trilinear_matrix"]

# cap on the (replicas x nnz) scratch array of the fallback
_CHUNK = 1 << 22


def _apply_py(c, a, b, val, U, V, out, scatter):
    R = U.shape[0]
    step = max(1, _CHUNK // max(val.size, 1))
    for lo in range(0, R, step):
        prod = val * U[lo:lo + step, a] * V[lo:lo + step, b]
        out[lo:lo + step] += (scatter @ prod.T).T


def trilinear_apply(c, a, b, val, U, V, out, scatter=None, backend=None):
    """Accumulate ``out[r, c] += val U[r, a] V[r, b]`` in place."""
    use = backend or BACKEND
    if use == "cython":
        if _ext is None:
            raise RuntimeError("compiled kernels are not available")
        _ext.trilinear_apply(c, a, b, val, U, V, out)
    else:
        if scatter is None:
            scatter = _scatter_matrix(c, out.shape[1])
        _apply_py(c, a, b, val, U, V, out, scatter)


def trilinear_matrix(c, a, b, val, u, out, backend=None):
    """Accumulate ``out[c, b] += val u[a]`` in place."""
    use = backend or BACKEND
    if use == "cython":
        if _ext is None:
            raise RuntimeError("compiled kernels are not available")
        _ext.trilinear_matrix(c, a, b, val, u, out)
    else:
        np.add.at(out, (c, b), val * u[a])


def _scatter_matrix(c, n):
    nnz = c.size
    return scipy.sparse.csr_matrix((np.ones(nnz), (c, np.arange(nnz))), shape=(n, nnz))


class TrilinearForm:
    """``B(u, v)_c = sum T[c, a, b] u_a v_b`` stored as coordinate lists."""

    def __init__(self, c, a, b, val, n: int):
        order = np.lexsort((b, a, c))
        self.c = np.ascontiguousarray(np.asarray(c, dtype=np.int64)[order])
        self.a = np.ascontiguousarray(np.asarray(a, dtype=np.int64)[order])
        self.b = np.ascontiguousarray(np.asarray(b, dtype=np.int64)[order])
        self.val = np.ascontiguousarray(np.asarray(val, dtype=float)[order])
        self.n = int(n)
        self._scatter = None
        for arr in (self.c, self.a, self.b, self.val):
            arr.setflags(write=False)

    @property
    def nnz(self) -> int:
        return self.val.size

    @property
    def scatter(self):
        if self._scatter is None:
            self._scatter = _scatter_matrix(self.c, self.n)
        return self._scatter

    def apply(self, u, v, backend=None) -> np.ndarray:
        """Evaluate on vectors of shape (n,) or batches of shape (R, n)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        single = u.ndim == 1
        U = np.ascontiguousarray(np.atleast_2d(u))
        V = np.ascontiguousarray(np.atleast_2d(v))
        if U.shape != V.shape or U.shape[1] != self.n:
            raise ValueError(f"shape mismatch: {U.shape}, {V.shape}, n={self.n}")
        out = np.zeros_like(U)
        trilinear_apply(self.c, self.a, self.b, self.val, U, V, out,
                        scatter=None if (backend or BACKEND) == "cython" else self.scatter,
                        backend=backend)
        return out[0] if single else out

    def matrix(self, u, backend=None) -> np.ndarray:
        """Dense matrix of ``v -> B(u, v)``."""
        u = np.ascontiguousarray(u, dtype=float)
        out = np.zeros((self.n, self.n))
        trilinear_matrix(self.c, self.a, self.b, self.val, u, out, backend=backend)
        return out

    def restrict(self, a_set=None, b_set=None) -> "TrilinearForm":
        """Keep entries with first index in ``a_set`` and second in ``b_set``."""
        keep = np.ones(self.nnz, dtype=bool)
        if a_set is not None:
            keep &= np.isin(self.a, np.asarray(a_set))
        if b_set is not None:
            keep &= np.isin(self.b, np.asarray(b_set))
        return TrilinearForm(self.c[keep], self.a[keep], self.b[keep], self.val[keep], self.n)

    def dense(self) -> np.ndarray:
        T = np.zeros((self.n, self.n, self.n))
        np.add.at(T, (self.c, self.a, self.b), self.val)
        return T
