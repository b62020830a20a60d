# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``."""
import numpy as np
from libc.math cimport sqrt
cimport numpy as cnp

cnp.import_array()


cdef inline void _gather(const double[:, :, ::1] u, Py_ssize_t i, Py_ssize_t j, double* ue) noexcept nogil:
    ue[0] = u[i, j, 0]
    ue[1] = u[i, j, 1]
    ue[2] = u[i + 1, j, 0]
    ue[3] = u[i + 1, j, 1]
    ue[4] = u[i + 1, j + 1, 0]
    ue[5] = u[i + 1, j + 1, 1]
    ue[6] = u[i, j + 1, 0]
    ue[7] = u[i, j + 1, 1]


cdef inline void _scatter(double[:, :, ::1] out, Py_ssize_t i, Py_ssize_t j, const double* fe) noexcept nogil:
    out[i, j, 0] += fe[0]
    out[i, j, 1] += fe[1]
    out[i + 1, j, 0] += fe[2]
    out[i + 1, j, 1] += fe[3]
    out[i + 1, j + 1, 0] += fe[4]
    out[i + 1, j + 1, 1] += fe[5]
    out[i, j + 1, 0] += fe[6]
    out[i, j + 1, 1] += fe[7]


def apply_scaled_k0(E, u, k0):
    cdef const double[:, ::1] Ev = np.ascontiguousarray(E, dtype=np.float64)
    cdef const double[:, :, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] kv = np.ascontiguousarray(k0, dtype=np.float64)
    cdef Py_ssize_t nx = Ev.shape[0], ny = Ev.shape[1]
    out = np.zeros((nx + 1, ny + 1, 2))
    cdef double[:, :, ::1] ov = out
    cdef double ue[8]
    cdef double fe[8]
    cdef double s, e
    cdef Py_ssize_t i, j, a, b
    with nogil:
        for i in range(nx):
            for j in range(ny):
                _gather(uv, i, j, ue)
                e = Ev[i, j]
                for a in range(8):
                    s = 0.0
                    for b in range(8):
                        s = s + kv[a, b] * ue[b]
                    fe[a] = e * s
                _scatter(ov, i, j, fe)
    return out


def apply_element_matrices(Ke, u):
    cdef const double[:, :, :, ::1] Kv = np.ascontiguousarray(Ke, dtype=np.float64)
    cdef const double[:, :, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t nx = Kv.shape[0], ny = Kv.shape[1]
    out = np.zeros((nx + 1, ny + 1, 2))
    cdef double[:, :, ::1] ov = out
    cdef double ue[8]
    cdef double fe[8]
    cdef double s
    cdef Py_ssize_t i, j, a, b
    with nogil:
        for i in range(nx):
            for j in range(ny):
                _gather(uv, i, j, ue)
                for a in range(8):
                    s = 0.0
                    for b in range(8):
                        s = s + Kv[i, j, a, b] * ue[b]
                    fe[a] = s
                _scatter(ov, i, j, fe)
    return out


def element_quadform(u, k0):
    cdef const double[:, :, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] kv = np.ascontiguousarray(k0, dtype=np.float64)
    cdef Py_ssize_t nx = uv.shape[0] - 1, ny = uv.shape[1] - 1
    out = np.empty((nx, ny))
    cdef double[:, ::1] ov = out
    cdef double ue[8]
    cdef double s, q, tx, ty, th
    cdef double h = 0.5 / sqrt(2.0)
    cdef double rot[8]
    rot[:] = [h, -h, h, h, -h, h, -h, -h]
    cdef Py_ssize_t i, j, a, b
    with nogil:
        for i in range(nx):
            for j in range(ny):
                _gather(uv, i, j, ue)
                # drop rigid translation and rotation before the quadratic form
                tx = 0.5 * (ue[0] + ue[2] + ue[4] + ue[6])
                ty = 0.5 * (ue[1] + ue[3] + ue[5] + ue[7])
                th = 0.0
                for a in range(8):
                    th = th + rot[a] * ue[a]
                for a in range(4):
                    ue[2 * a] = ue[2 * a] - 0.5 * tx - th * rot[2 * a]
                    ue[2 * a + 1] = ue[2 * a + 1] - 0.5 * ty - th * rot[2 * a + 1]
                q = 0.0
                for a in range(8):
                    s = 0.0
                    for b in range(8):
                        s = s + kv[a, b] * ue[b]
                    q = q + s * ue[a]
                ov[i, j] = q
    return out


def correlate(a, offsets, weights):
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const Py_ssize_t[:, ::1] off = np.ascontiguousarray(offsets, dtype=np.intp)
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t nx = av.shape[0], ny = av.shape[1], m = off.shape[0]
    out = np.zeros((nx, ny))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, k, di, dj, i0, i1, j0, j1
    cdef double w
    with nogil:
        # offset-outer loop keeps the summation order identical to the numpy twin
        for k in range(m):
            di = off[k, 0]
            dj = off[k, 1]
            w = wv[k]
            i0 = -di if di < 0 else 0
            i1 = nx - di if di > 0 else nx
            j0 = -dj if dj < 0 else 0
            j1 = ny - dj if dj > 0 else ny
            for i in range(i0, i1):
                for j in range(j0, j1):
                    ov[i, j] += w * av[i + di, j + dj]
    return out
