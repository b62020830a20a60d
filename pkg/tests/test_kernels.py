"""Compiled and numpy kernels must agree; both are checked against loops."""
import os
import subprocess
import sys

import numpy as np
import pytest

from infillopt import _kernels_py, kernels
from infillopt.fem import element_stiffness
from infillopt.fields import counting_kernel, smoothing_kernel


def _loop_apply(E, u, k0):
    nx, ny = E.shape
    out = np.zeros_like(u)
    for i in range(nx):
        for j in range(ny):
            ue = np.concatenate([u[i, j], u[i + 1, j], u[i + 1, j + 1], u[i, j + 1]])
            fe = E[i, j] * k0 @ ue
            out[i, j] += fe[0:2]
            out[i + 1, j] += fe[2:4]
            out[i + 1, j + 1] += fe[4:6]
            out[i, j + 1] += fe[6:8]
    return out


def _loop_correlate(a, offsets, weights):
    nx, ny = a.shape
    out = np.zeros_like(a)
    for i in range(nx):
        for j in range(ny):
            for (di, dj), w in zip(offsets, weights):
                if 0 <= i + di < nx and 0 <= j + dj < ny:
                    out[i, j] += w * a[i + di, j + dj]
    return out


def test_apply_scaled_k0_matches_loop(backend, rng):
    k0 = element_stiffness(0.3)
    E = rng.random((5, 4))
    u = rng.standard_normal((6, 5, 2))
    assert np.allclose(backend.apply_scaled_k0(E, u, k0), _loop_apply(E, u, k0), rtol=1e-13, atol=1e-13)


def test_apply_element_matrices_matches_scaled(backend, rng):
    k0 = element_stiffness(0.3)
    E = rng.random((4, 6))
    Ke = np.ascontiguousarray(E[..., None, None] * k0)
    u = rng.standard_normal((5, 7, 2))
    assert np.allclose(backend.apply_element_matrices(Ke, u), _loop_apply(E, u, k0), rtol=1e-13, atol=1e-13)


def test_quadform(backend, rng):
    k0 = element_stiffness(0.3)
    u = rng.standard_normal((4, 3, 2))
    q = backend.element_quadform(u, k0)
    ue = _kernels_py.gather(u)
    ref = np.einsum("xyi,ij,xyj->xy", ue, k0, ue)
    assert np.allclose(q, ref, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("kernel", [smoothing_kernel(2.0), counting_kernel(2.5)])
def test_correlate_matches_loop(backend, rng, kernel):
    a = rng.random((7, 5))
    got = backend.correlate(a, kernel.offsets, kernel.weights)
    assert np.allclose(got, _loop_correlate(a, kernel.offsets, kernel.weights), rtol=1e-14, atol=1e-14)


def test_backends_bitwise_equal_on_correlate(rng):
    compiled = pytest.importorskip("infillopt._kernels")
    k = counting_kernel(6.0)
    a = rng.random((40, 30))
    assert np.array_equal(compiled.correlate(a, k.offsets, k.weights), _kernels_py.correlate(a, k.offsets, k.weights))


def test_backends_agree_on_large_apply(rng):
    compiled = pytest.importorskip("infillopt._kernels")
    k0 = element_stiffness(0.3)
    E = rng.random((64, 32))
    u = rng.standard_normal((65, 33, 2))
    a = compiled.apply_scaled_k0(E, u, k0)
    b = _kernels_py.apply_scaled_k0(E, u, k0)
    assert np.max(np.abs(a - b)) <= 1e-13 * np.max(np.abs(b))


def test_backend_selection_env():
    code = "from infillopt import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, INFILLOPT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("python", "cython")


def test_quadform_ignores_large_rigid_motion(backend):
    k0 = element_stiffness(0.3)
    rng = np.random.default_rng(3)
    strain = 1e-4 * rng.random((6, 5, 2))
    X, Y = np.meshgrid(np.arange(6.0), np.arange(5.0), indexing="ij")
    rigid = np.stack([1e4 - 30.0 * Y, -2e4 + 30.0 * X], axis=2)
    ref = backend.element_quadform(strain, k0)
    got = backend.element_quadform(strain + rigid, k0)
    assert np.allclose(got, ref, rtol=1e-6, atol=0)
