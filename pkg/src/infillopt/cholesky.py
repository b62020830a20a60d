"""Sparse Cholesky of the global stiffness through CHOLMOD (via cvxopt).

The sparsity pattern of ``K`` never changes (``Emin > 0``), so the fill-reducing
ordering and symbolic factorization are computed once. Refactoring for a new
modulus field only reruns the numeric phase. The lower triangle of ``K`` is a
fixed linear map of the element moduli, stored as a sparse matrix so that
assembly is one sparse mat-vec.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

try:
    from cvxopt import cholmod, matrix, spmatrix
except ImportError:  # pragma: no cover - exercised only without cvxopt
    cholmod = None

AVAILABLE = cholmod is not None


class StiffnessCholesky:
    """Factor ``K(E)`` with fixed dofs as identity rows; solve nodal arrays."""

    def __init__(self, k0: np.ndarray, free: np.ndarray):
        if not AVAILABLE:
            raise ImportError("cvxopt is required for the Cholesky solver")
        self.shape = free.shape
        nx, ny = free.shape[0] - 1, free.shape[1] - 1
        n = free.size
        fr = free.ravel() > 0
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        n0 = (i * (ny + 1) + j).ravel()
        nodes = np.stack([n0, n0 + ny + 1, n0 + ny + 2, n0 + 1], axis=1)
        edofs = np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 8)
        rows = np.repeat(edofs, 8, axis=1).ravel()
        cols = np.tile(edofs, (1, 8)).ravel()
        vals = np.tile(k0.ravel(), nx * ny)
        elem = np.repeat(np.arange(nx * ny), 64)
        keep = (rows >= cols) & fr[rows] & fr[cols] & (vals != 0)
        rows, cols, vals, elem = rows[keep], cols[keep], vals[keep], elem[keep]
        key, pair = np.unique(cols * n + rows, return_inverse=True)
        fixed = np.flatnonzero(~fr)
        self._map = sp.csr_matrix((vals, (pair, elem)), shape=(key.size, nx * ny))
        self._I = matrix(np.concatenate([key % n, fixed]).astype(int))
        self._J = matrix(np.concatenate([key // n, fixed]).astype(int))
        self._ones = np.ones(fixed.size)
        self._n = n
        self._F = None

    def factor(self, E: np.ndarray) -> None:
        data = np.concatenate([self._map @ np.asarray(E, dtype=float).ravel(), self._ones])
        A = spmatrix(matrix(data), self._I, self._J, (self._n, self._n))
        if self._F is None:
            self._F = cholmod.symbolic(A)
        cholmod.numeric(A, self._F)

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = matrix(np.array(b, dtype=float).ravel())
        cholmod.solve(self._F, x)
        return np.array(x).reshape(self.shape)

    __call__ = solve
