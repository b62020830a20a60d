"""Per-element field transforms and their adjoints.

design phi --(weighted filter, radius r)--> phi_tilde --(tanh projection)--> rho
rho --(counting average, radius R or anisotropic lobes)--> rho_bar

Neighbourhoods are truncated at the domain outline and renormalised over the
members that exist, so no padding values enter any average.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

_EPS = 1e-12


@dataclass(frozen=True)
class FilterKernel:
    radius: float
    offsets: np.ndarray  # (m, 2) intp, centroid-to-centroid
    weights: np.ndarray  # (m,)
    shape: str = "disc"
    axis: str | None = None

    def __len__(self):
        return len(self.weights)


def _disc_offsets(radius: float, strict: bool) -> tuple[np.ndarray, np.ndarray]:
    n = int(np.floor(radius))
    di, dj = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
    d = np.hypot(di, dj)
    keep = d < radius if strict else d <= radius + _EPS
    offs = np.stack([di[keep], dj[keep]], axis=1).astype(np.intp)
    return offs, d[keep]


def smoothing_kernel(r: float) -> FilterKernel:
    """Linear hat weights ``1 - d / r`` over offsets with ``d < r``."""
    if not r > 0:
        raise ValueError(f"filter radius must be positive, got {r}")
    offs, d = _disc_offsets(r, strict=True)
    return FilterKernel(float(r), offs, 1.0 - d / r, "disc")


def counting_kernel(R: float) -> FilterKernel:
    """Unit weights over offsets with ``d <= R``."""
    if not R > 0:
        raise ValueError(f"influence radius must be positive, got {R}")
    offs, _ = _disc_offsets(R, strict=False)
    return FilterKernel(float(R), offs, np.ones(len(offs)), "disc")


def lobe_kernel(axis: str, r_long: float, r_short: float) -> FilterKernel:
    """Axis-aligned box lobe: ``|d_axis| <= r_long`` and ``|d_perp| <= r_short``."""
    if axis not in ("x", "y"):
        raise ValueError(f"lobe axis must be 'x' or 'y', got {axis!r}")
    if not (r_long > 0 and r_short >= 0):
        raise ValueError("lobe extents must be positive")
    nl, ns = int(np.floor(r_long + _EPS)), int(np.floor(r_short + _EPS))
    a, b = np.meshgrid(np.arange(-nl, nl + 1), np.arange(-ns, ns + 1), indexing="ij")
    a, b = a.ravel(), b.ravel()
    offs = np.stack([a, b] if axis == "x" else [b, a], axis=1).astype(np.intp)
    return FilterKernel(float(r_long), offs, np.ones(len(offs)), "lobe", axis)


def _check_field(a, shape, name):
    a = np.asarray(a, dtype=float)
    if a.shape != shape:
        raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
    return a


class DensityFilter:
    """Weighted average ``phi -> phi_tilde`` restricted to ``domain``."""

    def __init__(self, kernel: FilterKernel, domain: np.ndarray):
        self.kernel = kernel
        self.domain = np.asarray(domain, dtype=bool)
        self._m = self.domain.astype(float)
        wsum = kernels.correlate(self._m, kernel.offsets, kernel.weights)
        self.wsum = np.where(self.domain, wsum, 1.0)

    def forward(self, phi):
        phi = _check_field(phi, self.domain.shape, "phi")
        num = kernels.correlate(phi * self._m, self.kernel.offsets, self.kernel.weights)
        return num / self.wsum * self._m

    def adjoint(self, s):
        s = _check_field(s, self.domain.shape, "sensitivity")
        return kernels.correlate(s * self._m / self.wsum, -self.kernel.offsets, self.kernel.weights) * self._m


def smooth_filter(phi, kernel: FilterKernel, passive=None, domain=None):
    """One-shot filter. Passive elements enter as solid (phi = 1)."""
    phi = np.asarray(phi, dtype=float)
    domain = np.ones(phi.shape, bool) if domain is None else np.asarray(domain, bool)
    if passive is not None:
        phi = np.where(passive, 1.0, phi)
    return DensityFilter(kernel, domain).forward(phi)


def project(phi_tilde, beta: float):
    """Smoothed Heaviside step at 1/2 with sharpness ``beta``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    t = np.tanh(beta / 2)
    rho = (t + np.tanh(beta * (np.asarray(phi_tilde, dtype=float) - 0.5))) / (2 * t)
    return np.clip(rho, 0.0, 1.0)


def project_derivative(phi_tilde, beta: float):
    th = np.tanh(beta * (np.asarray(phi_tilde, dtype=float) - 0.5))
    return beta * (1.0 - th * th) / (2 * np.tanh(beta / 2))


class LocalVolume:
    """Counting average ``rho -> rho_bar`` over active members of each neighbourhood.

    Only active elements contribute and only active elements carry a value;
    entries outside ``active`` are returned as 0.
    """

    def __init__(self, kernel: FilterKernel, active: np.ndarray):
        self.kernel = kernel
        self.active = np.asarray(active, dtype=bool)
        if not self.active.any():
            raise ValueError("no active elements to average over")
        self._m = self.active.astype(float)
        count = kernels.correlate(self._m, kernel.offsets, kernel.weights)
        if np.any(count[self.active] <= 0):
            raise ValueError("empty local-volume neighbourhood")
        self.count = np.where(self.active, count, 1.0)

    def forward(self, rho):
        rho = _check_field(rho, self.active.shape, "rho")
        return kernels.correlate(rho * self._m, self.kernel.offsets, self.kernel.weights) / self.count * self._m

    def adjoint(self, s):
        s = _check_field(s, self.active.shape, "sensitivity")
        return kernels.correlate(s * self._m / self.count, -self.kernel.offsets, self.kernel.weights) * self._m


def local_volume(rho, kernel: FilterKernel, passive=None, domain=None):
    rho = np.asarray(rho, dtype=float)
    active = np.ones(rho.shape, bool) if domain is None else np.asarray(domain, bool).copy()
    if passive is not None:
        active &= ~np.asarray(passive, bool)
    return LocalVolume(kernel, active).forward(rho)


def local_volume_aniso(rho, axis: str, kernel: FilterKernel | None = None, R: float = 6.0,
                       r_short: float = 2.0, passive=None, domain=None):
    """Local volume over the lobe along ``axis``; ``kernel`` overrides the lobe."""
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    k = kernel if kernel is not None else lobe_kernel(axis, R, r_short)
    return local_volume(rho, k, passive, domain)


def chain_backprop(phi_tilde, beta: float, density_filter: DensityFilter, d_rho=None,
                   d_rho_bar=None, local: LocalVolume | None = None, frozen=None):
    """Pull sensitivities back to the design field.

    ``d_rho`` is dF/drho, ``d_rho_bar`` is dF/drho_bar (needs ``local``); both
    may be given and are summed. ``frozen`` marks elements whose rho is pinned
    (passive or outside) and therefore pass no sensitivity on.
    """
    shape = np.shape(phi_tilde)
    total = np.zeros(shape)
    if d_rho is not None:
        total += np.asarray(d_rho, dtype=float)
    if d_rho_bar is not None:
        if local is None:
            raise ValueError("d_rho_bar given without its LocalVolume operator")
        total += local.adjoint(d_rho_bar)
    if frozen is not None:
        total = np.where(frozen, 0.0, total)
    return density_filter.adjoint(total * project_derivative(phi_tilde, beta))
