"""Aggregated local-volume constraint, total-volume constraint, wall bound."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LocalVolumeConstraint:
    alpha: float
    p: float = 16.0
    anisotropic: bool = False


@dataclass(frozen=True)
class TotalVolumeConstraint:
    alpha_total: float


def eval_local(rho_bar, alpha: float, p: float = 16.0):
    """p-mean of the local volumes relative to ``alpha``.

    ``g = ((1/n) sum rho_bar^p)^(1/p) / alpha - 1``. ``rho_bar`` holds the
    values of the n constrained elements. Returns ``(g, dg/drho_bar)``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    rb = np.asarray(rho_bar, dtype=float)
    n = rb.size
    if n == 0:
        raise ValueError("no constrained elements")
    top = rb.max()
    if top <= 0.0:
        return -1.0, np.zeros_like(rb)
    # scale by the max so rb**p neither under- nor overflows
    q = rb / top
    qp1 = q ** (p - 1)
    mean = np.dot(qp1, q) / n
    pnorm = top * mean ** (1.0 / p)
    g = pnorm / alpha - 1.0
    grad = mean ** (1.0 / p - 1.0) * qp1 / (alpha * n)
    return float(g), grad


def eval_total(rho, alpha_total: float, domain=None):
    """Volume fraction over the domain minus the limit; gradient is ``1/n``."""
    if not 0 < alpha_total <= 1:
        raise ValueError("alpha_total must lie in (0, 1]")
    rho = np.asarray(rho, dtype=float)
    dom = np.ones(rho.shape, bool) if domain is None else np.asarray(domain, bool)
    n = int(dom.sum())
    g1 = float(rho[dom].sum() / n - alpha_total)
    return g1, dom / n


@dataclass(frozen=True)
class WallBound:
    ratio: float
    alpha: float | None

    @property
    def suppresses_walls(self) -> bool | None:
        """True when ``alpha`` is below the wall volume fraction."""
        return None if self.alpha is None else self.alpha < self.ratio


def wall_bound(alpha: float | None, R: float, r: float) -> WallBound:
    """Volume fraction a wall of thickness 2r occupies in a ball of radius R.

    ``(2 pi r R^2 - 2/3 pi r^3) / (4/3 pi R^3)``; a local limit below it
    leaves too little material for a closed wall.
    """
    if not 0 <= r < R:
        raise ValueError(f"need 0 <= r < R, got r={r}, R={R}")
    ratio = (2.0 * r * R * R - (2.0 / 3.0) * r ** 3) / ((4.0 / 3.0) * R ** 3)
    return WallBound(ratio, alpha)
