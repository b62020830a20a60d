"""Geometric multigrid V-cycle used as a PCG preconditioner.

Coarse operators are Galerkin products built element by element: a coarse
element matrix is the sum over its 2x2 children of ``P_c^T K_c P_c`` where
``P_c`` is the bilinear interpolation from coarse to child element dofs.
For nested bilinear quads this equals the global ``P^T K P``. Fixed dofs are
masked out of the fine element matrices first, so coarse corrections never
touch them. The coarsest level is factorized with SuperLU.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from ._kernels_py import gather


def _child_prolongators() -> np.ndarray:
    """(2, 2, 8, 8): maps coarse element dofs to child (a, b) element dofs."""
    corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    P = np.zeros((2, 2, 8, 8))
    for a in range(2):
        for b in range(2):
            for k, (cx, cy) in enumerate(corners):
                xi, eta = (a + cx) / 2, (b + cy) / 2
                shape = [(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta]
                for K, w in enumerate(shape):
                    P[a, b, 2 * k, 2 * K] = w
                    P[a, b, 2 * k + 1, 2 * K + 1] = w
    return P


_PC = _child_prolongators()


def prolong(c: np.ndarray) -> np.ndarray:
    nxc, nyc = c.shape[0] - 1, c.shape[1] - 1
    f = np.zeros((2 * nxc + 1, 2 * nyc + 1, 2))
    f[0::2, 0::2] = c
    f[1::2, 0::2] = 0.5 * (c[:-1] + c[1:])
    f[0::2, 1::2] = 0.5 * (c[:, :-1] + c[:, 1:])
    f[1::2, 1::2] = 0.25 * (c[:-1, :-1] + c[1:, :-1] + c[:-1, 1:] + c[1:, 1:])
    return f


def restrict(f: np.ndarray) -> np.ndarray:
    """Transpose of ``prolong``."""
    c = f[0::2, 0::2].copy()
    h = 0.5 * f[1::2, 0::2]
    c[:-1] += h
    c[1:] += h
    h = 0.5 * f[0::2, 1::2]
    c[:, :-1] += h
    c[:, 1:] += h
    q = 0.25 * f[1::2, 1::2]
    c[:-1, :-1] += q
    c[1:, :-1] += q
    c[:-1, 1:] += q
    c[1:, 1:] += q
    return c


def coarsen_element_matrices(Ke: np.ndarray) -> np.ndarray:
    out = 0.0
    for a in range(2):
        for b in range(2):
            P = _PC[a, b]
            out = out + P.T @ Ke[a::2, b::2] @ P
    return np.ascontiguousarray(out)


def _scatter_diag(Ke: np.ndarray) -> np.ndarray:
    de = np.einsum("xyii->xyi", Ke)
    nx, ny = Ke.shape[:2]
    d = np.zeros((nx + 1, ny + 1, 2))
    d[:-1, :-1] += de[..., 0:2]
    d[1:, :-1] += de[..., 2:4]
    d[1:, 1:] += de[..., 4:6]
    d[:-1, 1:] += de[..., 6:8]
    return d


def _assemble(Ke: np.ndarray, free: np.ndarray) -> sp.csc_matrix:
    nx, ny = Ke.shape[:2]
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    n0 = (i * (ny + 1) + j).ravel()
    nodes = np.stack([n0, n0 + ny + 1, n0 + ny + 2, n0 + 1], axis=1)
    edofs = np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 8)
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    n = 2 * (nx + 1) * (ny + 1)
    K = sp.coo_matrix((Ke.reshape(-1), (rows, cols)), shape=(n, n)).tocsc()
    return (K + sp.diags(1.0 - free.ravel())).tocsc()


class _Level:
    def __init__(self, Ke=None, E=None, k0=None, free=None):
        self.Ke = Ke
        self.E = E
        self.k0 = k0
        if Ke is not None:
            d = _scatter_diag(Ke)
            self.free = (d > 0).astype(float)
            self.diag = d + (1.0 - self.free)
        else:
            self.free = free
            fe = E[..., None] * np.diag(k0)[None, None, :]
            d = np.zeros(free.shape)
            d[:-1, :-1] += fe[..., 0:2]
            d[1:, :-1] += fe[..., 2:4]
            d[1:, 1:] += fe[..., 4:6]
            d[:-1, 1:] += fe[..., 6:8]
            self.diag = d * free + (1.0 - free)
        self.inv_diag = 1.0 / self.diag
        self.lu = None

    def apply(self, u):
        if self.Ke is None:
            out = kernels.apply_scaled_k0(self.E, u * self.free, self.k0)
            out *= self.free
        else:
            out = kernels.apply_element_matrices(self.Ke, u)
        out += u * (1.0 - self.free)
        return out


class GeometricMultigrid:
    """Symmetric V-cycle: ``smooth`` damped-Jacobi sweeps before and after."""

    def __init__(self, E, k0, free, max_coarse_dofs=3000, max_levels=8, smooth=2, omega=0.6, gamma=1):
        self.gamma = gamma
        self.smooth = smooth
        self.omega = omega
        E = np.ascontiguousarray(E, dtype=float)
        self.levels = [_Level(E=E, k0=k0, free=free)]
        nx, ny = E.shape
        Ke = None
        while (len(self.levels) < max_levels and nx % 2 == 0 and ny % 2 == 0
               and min(nx, ny) >= 4 and 2 * (nx + 1) * (ny + 1) > max_coarse_dofs):
            if Ke is None:
                m = gather(free)
                Ke = E[..., None, None] * k0[None, None] * (m[..., :, None] * m[..., None, :])
            Ke = coarsen_element_matrices(Ke)
            nx, ny = nx // 2, ny // 2
            self.levels.append(_Level(Ke=Ke))
        if len(self.levels) > 1:
            last = self.levels[-1]
            last.lu = spla.splu(_assemble(last.Ke, last.free))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def _cycle(self, lvl: int, b: np.ndarray) -> np.ndarray:
        L = self.levels[lvl]
        if L.lu is not None:
            return L.lu.solve(b.ravel()).reshape(b.shape) * L.free
        w = self.omega * L.inv_diag
        x = w * b
        for _ in range(self.smooth - 1):
            x += w * (b - L.apply(x))
        r = b - L.apply(x)
        C = self.levels[lvl + 1]
        rc = restrict(r * L.free) * C.free
        ec = self._cycle(lvl + 1, rc)
        for _ in range(self.gamma - 1 if C.lu is None else 0):
            ec += self._cycle(lvl + 1, rc - C.apply(ec))
        x += prolong(ec) * L.free
        for _ in range(self.smooth):
            x += w * (b - L.apply(x))
        return x

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self._cycle(0, r)
