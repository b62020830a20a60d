"""Compiled vs numpy kernels on a desk-scale grid.

    python benchmarks/bench_kernels.py [--nx 400 --ny 200 --repeat 5]

Prints the best-of-``repeat`` time per call for every kernel in both
backends, then one full forward+sensitivity evaluation per backend (run in a
subprocess so backend selection happens at import, as in production).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from infillopt import _kernels_py
from infillopt.fem import element_stiffness
from infillopt.fields import counting_kernel, smoothing_kernel

try:
    from infillopt import _kernels as _compiled
except ImportError:
    _compiled = None

EVAL_SNIPPET = """
import time, numpy as np
from infillopt import kernels
from infillopt.grid import cantilever
from infillopt.optimizer import InfillModel, OptimizationConfig
m = InfillModel(cantilever({nx}, {ny}), OptimizationConfig())
phi = np.random.default_rng(0).uniform(0.2, 0.9, m.n_active)
m.evaluate(phi, 4.0)
best = 1e9
for _ in range({repeat}):
    t = time.perf_counter(); m.evaluate(phi, 4.0); best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--nx", type=int, default=400)
    ap.add_argument("--ny", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    nx, ny = args.nx, args.ny
    rng = np.random.default_rng(0)
    u = rng.standard_normal((nx + 1, ny + 1, 2))
    E = rng.random((nx, ny))
    Ke = np.broadcast_to(element_stiffness(0.3), (nx, ny, 8, 8)) * E[..., None, None]
    Ke = np.ascontiguousarray(Ke)
    k0 = element_stiffness(0.3)
    field = rng.random((nx, ny))
    fk, ck = smoothing_kernel(2.0), counting_kernel(6.0)
    cases = {
        "apply_scaled_k0": lambda m: m.apply_scaled_k0(E, u, k0),
        "apply_element_matrices": lambda m: m.apply_element_matrices(Ke, u),
        "element_quadform": lambda m: m.element_quadform(u, k0),
        "correlate r=2 (9 taps)": lambda m: m.correlate(field, fk.offsets, fk.weights),
        "correlate R=6 (113 taps)": lambda m: m.correlate(field, ck.offsets, ck.weights),
    }
    print(f"grid {nx}x{ny}, best of {args.repeat}")
    print(f"{'kernel':28s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, call in cases.items():
        tp = _best(lambda: call(_kernels_py), args.repeat) * 1e3
        if _compiled is None:
            print(f"{name:28s} {tp:11.2f} {'n/a':>12s}")
            continue
        tc = _best(lambda: call(_compiled), args.repeat) * 1e3
        print(f"{name:28s} {tp:11.2f} {tc:12.2f} {tp / tc:7.1f}x")

    print("\nfull evaluation (filter, projection, state solve, sensitivities)")
    code = EVAL_SNIPPET.format(nx=nx, ny=ny, repeat=args.repeat)
    for pure in ("1", "0"):
        env = dict(os.environ, INFILLOPT_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, t = out.stdout.split()
        print(f"  {backend:8s} {float(t) * 1e3:9.1f} ms")


if __name__ == "__main__":
    main()
