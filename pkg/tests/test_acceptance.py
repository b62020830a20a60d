"""End-to-end acceptance checks at desk scale.

Each test prints one ``criterion N: PASS|FAIL`` line. The full-size runs are
shared through a module cache; the whole file takes roughly an hour on one
core. Run just this file with ``pytest -m slow -s tests/test_acceptance.py``.
"""
import time

import mpmath
import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from infillopt.analysis import damage_sweep, force_rotation_sweep
from infillopt.cli import main
from infillopt.constraints import eval_local, wall_bound
from infillopt.fem import FemSystem, MaterialModel, assemble_dense, element_stiffness, young_modulus
from infillopt.grid import BoundaryConditions, DesignProblem, Load, build_grid, cantilever, half_mbb, node_dofs
from infillopt.optimizer import InfillModel, OptimizationConfig, run, sensitivities

from oracles import LongDoubleModel, central_differences, rel_error

pytestmark = pytest.mark.slow

_RUNS = {}


def _run(key, problem, cfg):
    if key not in _RUNS:
        t = time.perf_counter()
        with threadpool_limits(limits=1):
            res = run(problem, cfg)
        _RUNS[key] = (res, time.perf_counter() - t)
    return _RUNS[key]


def cantilever_run(key):
    cfgs = {
        "local": OptimizationConfig(alpha=0.6),
        "total": OptimizationConfig(alpha=None, alpha_total=0.56),
        "local+0.5": OptimizationConfig(alpha=0.6, alpha_total=0.5),
        "local+0.4": OptimizationConfig(alpha=0.6, alpha_total=0.4),
        "local,r=3": OptimizationConfig(alpha=0.6, r=3.0),
    }
    return _run(key, cantilever(400, 200), cfgs[key])


def mbb_runs():
    """Local (alpha 0.4) and total-volume designs at matched volume on a 200x100 half-MBB."""
    pb = half_mbb(200, 100)
    local, _ = _run("mbb-local", pb, OptimizationConfig(alpha=0.4))
    total, _ = _run("mbb-total", pb, OptimizationConfig(alpha=None, alpha_total=round(local.volume, 4)))
    return pb, local, total


def full_beam(half):
    """Mirror a half-MBB design into the full simply supported beam with its centre load."""
    nx, ny = half.shape
    g = build_grid(2 * nx, ny)
    fixed = np.concatenate([node_dofs(g.node_id(0, 0)), node_dofs(g.node_id(2 * nx, 0), "y")])
    pb = DesignProblem(g, BoundaryConditions(fixed, [Load(g.node_id(nx, ny), 1, -1.0)]))
    return pb, np.concatenate([half[::-1], half])


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_cantilever_compliance(capsys):
    loc, t_loc = cantilever_run("local")
    tot, t_tot = cantilever_run("total")
    ratio = loc.compliance / tot.compliance
    ok_loc = abs(loc.compliance / 76.86 - 1) <= 0.15
    ok_tot = abs(tot.compliance / 57.13 - 1) <= 0.15
    ok_ratio = 1.15 <= ratio <= 1.55
    ok_time = max(t_loc, t_tot) <= 15 * 60
    report(capsys, 1, ok_loc and ok_tot and ok_ratio and ok_time,
           f"c_local={loc.compliance:.2f} c_total={tot.compliance:.2f} ratio={ratio:.3f} "
           f"time={t_loc / 60:.1f}/{t_tot / 60:.1f} min")


def test_criterion_02_local_volume_respected(capsys):
    res, _ = cantilever_run("local")
    rb = res.rho_bar[0][res.problem.active]
    frac = float(np.mean(rb <= 0.6 + 0.02))
    g, _ = eval_local(rb, 0.6, 16.0)
    report(capsys, 2, frac >= 0.95 and g <= 1e-3, f"share(rho_bar <= 0.62)={frac:.4f} g={g:.2e}")


def test_criterion_03_volume_and_compliance_trend(capsys):
    runs = [cantilever_run(k)[0] for k in ("local", "local+0.5", "local+0.4")]
    v = [r.volume for r in runs]
    c = [r.compliance for r in runs]
    ok = (0.52 <= v[0] <= 0.60 and abs(v[1] - 0.5) <= 1e-3 and abs(v[2] - 0.4) <= 1e-3
          and c[0] < c[1] < c[2])
    report(capsys, 3, ok, "volumes " + " ".join(f"{x:.4f}" for x in v)
           + " compliance " + " ".join(f"{x:.2f}" for x in c))


def test_criterion_04_damage_factor(capsys):
    pb, local, total = mbb_runs()
    f_loc = damage_sweep(local.rho, pb, 12).worst.ratio
    f_tot = damage_sweep(total.rho, pb, 12).worst.ratio
    ok = 1.2 <= f_loc <= 2.0 and f_tot >= 8 and f_loc < f_tot
    report(capsys, 4, ok, f"volumes {local.volume:.4f}/{total.volume:.4f} worst damage factor "
                          f"local={f_loc:.3f} total={f_tot:.3f}")


def _valley(c):
    k = int(np.argmin(c))
    d = np.diff(c)
    tol = 1e-9 * c.max()
    return 0 < k < c.size - 1 and np.all(d[:k] <= tol) and np.all(d[k:] >= -tol)


def test_criterion_05_force_rotation_crossover(capsys):
    _, local, total = mbb_runs()
    pb, rho_loc = full_beam(local.rho)
    _, rho_tot = full_beam(total.rho)
    deg = np.arange(-90, 91, 15)
    a_loc = force_rotation_sweep(rho_loc, pb, np.radians(deg)).after
    a_tot = force_rotation_sweep(rho_tot, pb, np.radians(deg)).after
    i0, i90 = list(deg).index(0), list(deg).index(90)
    ok = a_tot[i0] < a_loc[i0] and a_loc[i90] < a_tot[i90] and _valley(a_loc) and _valley(a_tot)
    report(capsys, 5, ok, f"0 deg local/total={a_loc[i0]:.2f}/{a_tot[i0]:.2f} "
                          f"90 deg local/total={a_loc[i90]:.1f}/{a_tot[i90]:.1f} "
                          f"valleys={_valley(a_loc)}/{_valley(a_tot)}")


def test_criterion_06_gradient_suite(capsys):
    t = time.perf_counter()
    worst = 0.0
    n = 0
    for seed in range(20):
        pb = (cantilever if seed % 2 == 0 else half_mbb)(10, 6)
        aniso = seed % 4 == 3
        cfg = OptimizationConfig(alpha=0.5, alpha_total=None if aniso else 0.45, R=2.5, r=1.5,
                                 anisotropic=aniso, preconditioner="direct")
        model, ref = InfillModel(pb, cfg), LongDoubleModel(pb, cfg)
        phi = np.random.default_rng(seed).random(model.n_active)
        for beta in (1.0, 8.0):
            dc, dgs = sensitivities(model, phi, beta)
            fd_c, fd_g = central_differences(ref, phi, beta, h=1e-6)
            worst = max([worst, rel_error(dc, fd_c)] + [rel_error(a, b) for a, b in zip(dgs, fd_g)])
            n += 1
    dt = time.perf_counter() - t
    report(capsys, 6, worst <= 1e-4 and dt <= 60, f"{n} cases, max rel error {worst:.2e}, {dt:.1f} s")


def test_criterion_07_oracles(capsys):
    rng = np.random.default_rng(7)
    worst = 0.0
    for nx, ny in [(4, 4), (8, 4), (12, 6), (12, 12)]:
        pb = cantilever(nx, ny)
        rho = 0.05 + 0.95 * rng.random((nx, ny))
        mat = MaterialModel()
        free = (~pb.bc.fixed_mask(pb.grid)).astype(float)
        K = assemble_dense(young_modulus(rho, mat), element_stiffness(mat.nu), free)
        ref = np.linalg.solve(K, (pb.bc.force_vector(pb.grid) * free).ravel())
        for pc in ("jacobi", "multigrid", "cholesky"):
            sys_ = FemSystem(pb.grid, pb.bc, mat, tol=1e-12, preconditioner=pc)
            sys_.set_density(rho)
            u = sys_.solve().ravel()
            worst = max(worst, np.linalg.norm(u - ref) / np.linalg.norm(ref))
    mpmath.mp.dps = 50
    worst_g = 0.0
    for n in (1, 7, 50, 100):
        vals = rng.random(n)
        for p in (2.0, 16.0):
            exact = (mpmath.fsum(mpmath.mpf(v) ** p for v in vals) / n) ** (1 / mpmath.mpf(p)) / mpmath.mpf(0.6) - 1
            worst_g = max(worst_g, abs(eval_local(vals, 0.6, p)[0] - float(exact)))
    report(capsys, 7, worst <= 1e-7 and worst_g <= 1e-12, f"fem rel error {worst:.1e}, p-norm abs error {worst_g:.1e}")


def test_criterion_08_convergence_and_sharpness(capsys):
    res, _ = cantilever_run("local")
    tr = res.trace
    it, beta, delta, c = (tr.column(k) for k in ("iteration", "beta", "delta", "compliance"))
    cfg = res.config
    jumps_ok = True
    for k in range(1, len(tr)):
        scheduled = (it[k - 1] % cfg.beta_period == 0 or delta[k - 1] < cfg.eps) and beta[k - 1] < cfg.beta_max
        expected = min(2 * beta[k - 1], cfg.beta_max) if scheduled else beta[k - 1]
        jumps_ok &= beta[k] == expected
    s = tr.records[-1].sharpness
    plateau = abs(c[-1] / c[-41] - 1) if len(tr) > 40 else np.inf
    report(capsys, 8, s <= 0.05 and jumps_ok and plateau <= 0.02,
           f"sharpness={s:.4f} beta doublings at {[int(it[k]) for k in range(1, len(tr)) if beta[k] != beta[k - 1]]} "
           f"40-iteration change={plateau:.4f}")


def test_criterion_09_wall_bound_and_filter_radius(capsys):
    ratio = wall_bound(0.6, 6.0, 3.0).ratio
    r2, _ = cantilever_run("local")
    r3, _ = cantilever_run("local,r=3")
    loss = 1 - r2.compliance / r3.compliance
    changed = float(np.mean(np.abs(r2.rho - r3.rho) > 0.5))
    ok = abs(ratio - 0.6875) <= 1e-12 and changed > 0.01 and 0 <= loss <= 0.25
    report(capsys, 9, ok, f"wall bound {ratio!r}, c r=2/3 = {r2.compliance:.2f}/{r3.compliance:.2f}, "
                          f"stiffness loss {loss:.3f}, changed elements {changed:.3f}")


CONFIG = """\
problem:
  nx: 60
  ny: 30
  preset: cantilever
optimization:
  alpha: 0.6
  max_iter: 80
output:
  wall_time: false
"""


def test_criterion_10_deterministic_outputs(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(CONFIG)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["optimize", str(cfg), "--out", str(out), "--quiet"]) == 0
    same = {n: (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
            for n in ("trace.csv", "density.pgm", "density.pgm.json", "density.npy")}
    report(capsys, 10, all(same.values()), " ".join(f"{k}={'identical' if v else 'DIFFERENT'}"
                                                    for k, v in same.items()))
