"""Plane-stress linear elasticity on the regular grid.

The stiffness operator is never assembled on the fine grid: ``apply_K``
streams element contributions ``E_e * k0 @ u_e``. Fixed dofs are kept in the
numbering and act as identity rows/columns.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import cholesky, kernels
from .grid import BoundaryConditions, Grid

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """PCG did not reach the requested tolerance."""

    def __init__(self, message, residual, iterations, u=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.u = u


@dataclass(frozen=True)
class MaterialModel:
    E0: float = 1.0
    Emin: float = 1e-9
    penal: float = 3.0
    nu: float = 0.3

    def __post_init__(self):
        if not (0 < self.Emin < self.E0):
            raise ValueError("require 0 < Emin < E0")
        if self.penal < 1:
            raise ValueError("penalization exponent must be >= 1")
        if not (-1 < self.nu < 0.5):
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")


def element_stiffness(nu: float) -> np.ndarray:
    """Bilinear unit-square plane-stress stiffness for E = 1 (8x8)."""
    if not (-1 < nu < 0.5):
        raise ValueError(f"Poisson ratio {nu} outside (-1, 0.5)")
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    idx = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return k[idx] / (1 - nu * nu)


def young_modulus(rho, material: MaterialModel):
    rho = np.asarray(rho, dtype=float)
    return material.Emin + rho ** material.penal * (material.E0 - material.Emin)


def young_modulus_derivative(rho, material: MaterialModel):
    rho = np.asarray(rho, dtype=float)
    return material.penal * rho ** (material.penal - 1) * (material.E0 - material.Emin)


def apply_K(E, u, k0, free=None):
    """Matrix-free ``K u`` with fixed dofs (``free == 0``) as identity rows."""
    E = np.asarray(E, dtype=float)
    u = np.asarray(u, dtype=float)
    nx, ny = E.shape
    if u.shape != (nx + 1, ny + 1, 2):
        raise ValueError(f"displacement shape {u.shape} does not match grid {nx}x{ny}")
    if free is None:
        return kernels.apply_scaled_k0(E, u, k0)
    out = kernels.apply_scaled_k0(E, u * free, k0)
    out *= free
    out += u * (1.0 - free)
    return out


def assemble_dense(E, k0, free=None) -> np.ndarray:
    """Dense global stiffness; only meant for tiny grids and tests."""
    nx, ny = E.shape
    grid = Grid(nx, ny)
    edofs = grid.element_dofs()
    K = np.zeros((grid.n_dofs, grid.n_dofs))
    for e, Ee in enumerate(np.asarray(E).ravel()):
        d = edofs[e]
        K[np.ix_(d, d)] += Ee * k0
    if free is not None:
        fr = np.asarray(free, dtype=float).ravel()
        K = K * fr[:, None] * fr[None, :] + np.diag(1.0 - fr)
    return K


def jacobi_diagonal(E, k0, free):
    nx, ny = E.shape
    fe = E[..., None] * np.diag(k0)[None, None, :]
    d = np.zeros((nx + 1, ny + 1, 2))
    d[:-1, :-1] += fe[..., 0:2]
    d[1:, :-1] += fe[..., 2:4]
    d[1:, 1:] += fe[..., 4:6]
    d[:-1, 1:] += fe[..., 6:8]
    return d * free + (1.0 - free)


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    converged: bool


def pcg(apply_A, b, x0, precond, tol=1e-6, max_iter=5000):
    """Preconditioned conjugate gradients on nodal arrays.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns ``(x, SolveInfo)``.
    """
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(0, 0.0, True)
    x = np.array(x0, dtype=float, copy=True)
    r = b - apply_A(x)
    rnorm = np.linalg.norm(r)
    if rnorm <= tol * bnorm:
        return x, SolveInfo(0, rnorm / bnorm, True)
    z = precond(r)
    p = z.copy()
    rz = np.vdot(r, z)
    it = 0
    while it < max_iter:
        it += 1
        Ap = apply_A(p)
        alpha = rz / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= tol * bnorm:
            # guard against drift of the recursive residual
            rtrue = np.linalg.norm(b - apply_A(x))
            if rtrue <= tol * bnorm:
                return x, SolveInfo(it, rtrue / bnorm, True)
            r = b - apply_A(x)
            z = precond(r)
            p = z.copy()
            rz = np.vdot(r, z)
            continue
        z = precond(r)
        rz_new = np.vdot(r, z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    return x, SolveInfo(it, rnorm / bnorm, False)


class FemSystem:
    """State equation ``K(rho) u = f`` on a grid with fixed supports.

    ``preconditioner`` is one of

    * ``"cholesky"``: sparse Cholesky (CHOLMOD). After a modulus update the
      previous factor first serves as a PCG preconditioner; the matrix is only
      refactored when that takes more than ``reuse_iters`` iterations, and
      repeated misses skip the attempt for 1, 3, 7, ... solves. Falls
      back to ``"multigrid"`` when cvxopt is missing.
    * ``"multigrid"``: PCG with a Jacobi-smoothed geometric V-cycle, or plain
      Jacobi when the grid cannot be coarsened.
    * ``"jacobi"``: diagonal-preconditioned PCG.
    * ``"direct"``: fresh sparse LU per modulus field, no iteration; for small
      grids and reference runs.

    The last solution is kept and used as the next starting guess.
    """

    PRECONDITIONERS = ("cholesky", "multigrid", "jacobi", "direct")

    def __init__(self, grid: Grid, bc: BoundaryConditions, material: MaterialModel = MaterialModel(),
                 tol: float = 1e-6, max_iter: int = 5000, preconditioner: str = "cholesky",
                 reuse_iters: int = 10):
        if preconditioner not in self.PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {preconditioner!r}")
        if preconditioner == "cholesky" and not cholesky.AVAILABLE:
            log.warning("cvxopt not installed; using the multigrid preconditioner")
            preconditioner = "multigrid"
        self.reuse_iters = reuse_iters
        self.grid = grid
        self.bc = bc
        self.material = material
        self.tol = tol
        self.max_iter = max_iter
        self.preconditioner = preconditioner
        self.k0 = element_stiffness(material.nu)
        self.free = (~bc.fixed_mask(grid)).astype(float)
        self.f = bc.force_vector(grid) * self.free
        self.E = None
        self.u = np.zeros(grid.nodal_shape)
        self.last_info = None
        self._precond = None
        self._chol = None
        self._chol_fresh = False
        self._misses = 0
        self._skip_reuse = 0

    def set_density(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.shape != self.grid.element_shape:
            raise ValueError("density field does not match grid")
        self.set_modulus(young_modulus(rho, self.material))

    def set_modulus(self, E):
        self.E = np.ascontiguousarray(E, dtype=float)
        self._precond = None
        self._chol_fresh = False

    def apply(self, u):
        return apply_K(self.E, u, self.k0, self.free)

    def _build_preconditioner(self):
        if self.preconditioner == "direct":
            from scipy.sparse.linalg import splu

            from ._kernels_py import gather
            from .multigrid import _assemble

            m = gather(self.free)
            Ke = self.E[..., None, None] * self.k0[None, None] * (m[..., :, None] * m[..., None, :])
            return splu(_assemble(Ke, self.free))
        if self.preconditioner == "multigrid":
            from .multigrid import GeometricMultigrid

            mg = GeometricMultigrid(self.E, self.k0, self.free)
            if mg.n_levels > 1:
                return mg
        inv = 1.0 / jacobi_diagonal(self.E, self.k0, self.free)
        return lambda r: r * inv

    def _refactor(self):
        if self._chol is None:
            self._chol = cholesky.StiffnessCholesky(self.k0, self.free)
        self._chol.factor(self.E)
        self._chol_fresh = True

    def _solve_cholesky(self, b, start, tol):
        total = 0
        if self._chol is not None and not self._chol_fresh:
            if self._skip_reuse > 0:
                self._skip_reuse -= 1
            else:
                u, info = pcg(self.apply, b, start, self._chol, tol=tol, max_iter=self.reuse_iters)
                if info.converged:
                    self._misses = 0
                    return u, info
                total = info.iterations
                # back off while the design is still moving fast
                self._misses = min(self._misses + 1, 5)
                self._skip_reuse = 2 ** self._misses - 1
        if not self._chol_fresh:
            self._refactor()
        u, info = pcg(self.apply, b, self._chol(b), self._chol, tol=tol, max_iter=self.max_iter)
        info.iterations += total
        return u, info

    def solve(self, f=None, x0=None, raise_on_fail=True, tol=None):
        if self.E is None:
            raise RuntimeError("set_density must be called before solve")
        b = self.f if f is None else np.asarray(f, dtype=float).reshape(self.grid.nodal_shape) * self.free
        start = (self.u if x0 is None else x0) * self.free
        tol = self.tol if tol is None else tol
        if self.preconditioner == "cholesky":
            u, info = self._solve_cholesky(b, start, tol)
            return self._finish(u, info, f, raise_on_fail)
        if self._precond is None:
            self._precond = self._build_preconditioner()
        if self.preconditioner == "direct":
            u = self._precond.solve(b.ravel()).reshape(b.shape)
            res = np.linalg.norm(b - self.apply(u)) / max(np.linalg.norm(b), 1e-300)
            self.last_info = SolveInfo(0, float(res), True)
            if f is None:
                self.u = u
            return u
        u, info = pcg(self.apply, b, start, self._precond, tol=tol, max_iter=self.max_iter)
        return self._finish(u, info, f, raise_on_fail)

    def _finish(self, u, info, f, raise_on_fail):
        self.last_info = info
        if not info.converged:
            if raise_on_fail:
                raise SolverError(
                    f"PCG stalled after {info.iterations} iterations, relative residual {info.residual:.3e}",
                    info.residual, info.iterations, u)
            log.warning("PCG stalled: residual %.3e after %d iterations", info.residual, info.iterations)
        if f is None:
            self.u = u
        return u


def solve_state(system: FemSystem, rho=None):
    if rho is not None:
        system.set_density(rho)
    return system.solve()


def compliance(u, E, k0) -> float:
    """Compliance ``u^T K u`` (equal to ``f^T u`` at equilibrium)."""
    return float(np.vdot(kernels.element_quadform(u, k0), E))


def element_energy(u, k0):
    """Per-element ``u_e^T k0 u_e`` (unit modulus)."""
    return kernels.element_quadform(np.ascontiguousarray(u, dtype=float), k0)


# d/dx and d/dy of the bilinear shape functions at the element centroid
_DNDX = np.array([-0.5, 0.5, 0.5, -0.5])
_DNDY = np.array([-0.5, -0.5, 0.5, 0.5])


def element_stress(u, E, nu):
    """Centroid stresses.

    Returns a dict of ``(nx, ny)`` arrays: ``sxx, syy, sxy``, principal values
    ``s1 >= s2``, ``theta`` (angle of the ``s1`` direction from the x axis,
    radians in (-pi/2, pi/2]) and ``von_mises``.
    """
    u = np.asarray(u, dtype=float)
    ux = np.stack([u[:-1, :-1, 0], u[1:, :-1, 0], u[1:, 1:, 0], u[:-1, 1:, 0]], axis=-1)
    uy = np.stack([u[:-1, :-1, 1], u[1:, :-1, 1], u[1:, 1:, 1], u[:-1, 1:, 1]], axis=-1)
    exx = ux @ _DNDX
    eyy = uy @ _DNDY
    gxy = ux @ _DNDY + uy @ _DNDX
    scale = np.asarray(E, dtype=float) / (1 - nu * nu)
    sxx = scale * (exx + nu * eyy)
    syy = scale * (nu * exx + eyy)
    sxy = scale * 0.5 * (1 - nu) * gxy
    mean = 0.5 * (sxx + syy)
    radius = np.hypot(0.5 * (sxx - syy), sxy)
    theta = 0.5 * np.arctan2(2 * sxy, sxx - syy)
    vm = np.sqrt(sxx ** 2 - sxx * syy + syy ** 2 + 3 * sxy ** 2)
    return {
        "sxx": sxx, "syy": syy, "sxy": sxy,
        "s1": mean + radius, "s2": mean - radius,
        "theta": theta, "von_mises": vm,
    }
