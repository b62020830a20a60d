"""Pure numpy implementations of the hot grid kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and the same floating point semantics (up to summation order). Arrays use
the package layout: element fields are ``(nx, ny)``, nodal vectors are
``(nx + 1, ny + 1, 2)``; element-local dof order is counter-clockwise from
the lower-left node, x before y.
"""
import numpy as np


def gather(u):
    """Element dof vectors, shape (nx, ny, 8)."""
    return np.concatenate((u[:-1, :-1], u[1:, :-1], u[1:, 1:], u[:-1, 1:]), axis=2)


def scatter(fe):
    """Sum element contributions (nx, ny, 8) into a nodal array."""
    nx, ny = fe.shape[:2]
    out = np.zeros((nx + 1, ny + 1, 2))
    out[:-1, :-1] += fe[..., 0:2]
    out[1:, :-1] += fe[..., 2:4]
    out[1:, 1:] += fe[..., 4:6]
    out[:-1, 1:] += fe[..., 6:8]
    return out


def apply_scaled_k0(E, u, k0):
    ue = gather(u)
    fe = ue @ k0
    fe *= E[..., None]
    return scatter(fe)


def apply_element_matrices(Ke, u):
    ue = gather(u)
    fe = np.einsum("xyij,xyj->xyi", Ke, ue)
    return scatter(fe)


# rigid modes of the unit square about its centroid (nodes counter-clockwise
# from lower-left); rotation normalised so that projections are plain dots
_RIGID = np.array([
    [0.5, 0, 0.5, 0, 0.5, 0, 0.5, 0],
    [0, 0.5, 0, 0.5, 0, 0.5, 0, 0.5],
    [0.5 / 2 ** 0.5, -0.5 / 2 ** 0.5, 0.5 / 2 ** 0.5, 0.5 / 2 ** 0.5,
     -0.5 / 2 ** 0.5, 0.5 / 2 ** 0.5, -0.5 / 2 ** 0.5, -0.5 / 2 ** 0.5],
])


def element_quadform(u, k0):
    # k0 annihilates rigid motion; removing it first avoids cancellation when
    # an element rides a large displacement with little strain
    ue = gather(u)
    ue = ue - (ue @ _RIGID.T) @ _RIGID
    return np.einsum("xyi,xyi->xy", ue @ k0, ue)


def correlate(a, offsets, weights):
    """out[i, j] = sum_k weights[k] * a[i + di_k, j + dj_k], zero outside."""
    nx, ny = a.shape
    out = np.zeros_like(a, dtype=float)
    for (di, dj), w in zip(offsets, weights):
        di = int(di)
        dj = int(dj)
        if abs(di) >= nx or abs(dj) >= ny:
            continue
        xs, xd = (slice(di, nx), slice(0, nx - di)) if di >= 0 else (slice(0, nx + di), slice(-di, nx))
        ys, yd = (slice(dj, ny), slice(0, ny - dj)) if dj >= 0 else (slice(0, ny + dj), slice(-dj, ny))
        out[xd, yd] += w * a[xs, ys]
    return out
