import csv
import json

import meshio
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infillopt import cli
from infillopt.cli import (ConfigError, build_opt_config, build_problem, density_pixels, main, parse_config,
                           read_density, read_pgm, render, write_density_image, write_fields_vtk,
                           write_trace_csv)
from infillopt.optimizer import IterationRecord, OptimizationTrace

MINIMAL = """\
problem:
  nx: 40
  ny: 20
  supports:
    - {edge: left}
  loads:
    - {node: [40, 10], fy: -1.0}
optimization:
  alpha: 0.6
"""

SMALL = """\
problem:
  nx: 24
  ny: 12
  preset: cantilever
optimization:
  alpha: 0.5
  R: 3
  r: 1.5
  max_iter: 12
solver:
  preconditioner: direct
output:
  wall_time: false
  snapshot_every: 5
"""


def test_minimal_config_gets_defaults():
    c = parse_config(MINIMAL)
    op = c["optimization"]
    assert (op["p"], op["penal"], op["r"], op["R"], op["eps"]) == (16.0, 3.0, 2.0, 6.0, 0.01)
    assert (op["beta0"], op["beta_period"], op["beta_max"], op["max_iter"]) == (1.0, 40, 512.0, 500)
    assert c["material"] == {"E0": 1.0, "Emin": 1e-9, "nu": 0.3}
    assert "p: 16.0" in render(c)


def test_minimal_config_builds_cantilever():
    c = parse_config(MINIMAL)
    pb = build_problem(c)
    assert pb.grid.element_shape == (40, 20)
    assert pb.bc.fixed_dofs.size == 42
    assert [(ld.node, ld.axis, ld.value) for ld in pb.bc.loads] == [(40 * 21 + 10, 1, -1.0)]
    assert build_opt_config(c).alpha == 0.6


@pytest.mark.parametrize("text,fragment", [
    (MINIMAL.replace("alpha: 0.6", "alpha: 1.5"), "line 9: optimization.alpha: value 1.5 out of range (0, 1]"),
    (MINIMAL.replace("alpha: 0.6", "alpa: 0.6"), "line 9: optimization.alpa: unknown key 'alpa' (did you mean 'alpha'?)"),
    (MINIMAL.replace("nx: 40", "nx: 4.5"), "line 2: problem.nx: expected an integer"),
    (MINIMAL.replace("  ny: 20\n", ""), "problem.ny: missing required key"),
    (MINIMAL.replace("[40, 10]", "[41, 10]"), "line 7: problem.loads.0.node: node [41, 10] outside"),
    (MINIMAL.replace("edge: left", "edge: west"), "edge must be one of"),
    (MINIMAL + "  r: 7\n", "r=7.0 must be below R=6.0"),
    (MINIMAL + "materal:\n  E0: 2\n", "did you mean 'material'?"),
    (MINIMAL.replace("  alpha: 0.6\n", "  alpha: null\n"), "need alpha, alpha_total or both"),
    ("problem: [1, 2]\n", "problem: expected a mapping"),
    ("a: [", "not valid YAML"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert fragment in str(exc.value)


def test_exponent_floats_without_dot():
    c = parse_config(MINIMAL + "material:\n  Emin: 1e-6\n")
    assert c["material"]["Emin"] == 1e-6


def test_render_round_trip():
    c = parse_config(SMALL + "material:\n  Emin: 1e-12\n  nu: 0.25\nanalysis:\n  angles_deg: [0, 22.5]\n")
    assert parse_config(render(c)) == c
    c = parse_config(MINIMAL)
    assert parse_config(render(c)) == c


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 1.0), st.one_of(st.none(), st.floats(0.01, 1.0)), st.floats(1e-12, 0.5),
       st.floats(2.0, 40.0), st.booleans())
def test_render_round_trip_property(alpha, alpha_total, emin, p, aniso):
    text = MINIMAL.replace("alpha: 0.6", f"alpha: {alpha!r}\n  alpha_total: {'null' if alpha_total is None else repr(alpha_total)}"
                           f"\n  p: {p!r}\n  anisotropic: {str(aniso).lower()}")
    text += f"material:\n  Emin: {emin!r}\n"
    c = parse_config(text)
    assert parse_config(render(c)) == c


def test_pixels():
    assert density_pixels(np.ones((3, 2))).max() == 0
    assert density_pixels(np.zeros((3, 2))).min() == 255
    assert density_pixels(np.full((1, 1), 0.5))[0, 0] == 128
    rho = np.zeros((3, 2))
    rho[0, 1] = 1.0  # left column, top row
    pix = density_pixels(rho)
    assert pix.shape == (2, 3) and pix[0, 0] == 0 and pix.sum() == 255 * 5
    with pytest.raises(ValueError):
        density_pixels(np.full((2, 2), 1.2))


def test_density_image_file_and_sidecar(tmp_path):
    rho = np.random.default_rng(0).random((7, 4))
    path = tmp_path / "d.pgm"
    write_density_image(rho, path, {"iterations": 3})
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n7 4\n255\n") and len(raw) == 11 + 28
    meta = json.loads((tmp_path / "d.pgm.json").read_text())
    assert (meta["nx"], meta["ny"], meta["iterations"]) == (7, 4, 3)
    assert np.array_equal(read_pgm(path), density_pixels(rho))
    assert np.abs(read_density(path) - rho).max() <= 0.5 / 255 + 1e-12


def test_vtk_round_trip_with_independent_reader(tmp_path):
    rng = np.random.default_rng(2)
    fields = {"rho": rng.random((5, 3)), "rho_bar": rng.random((5, 3))}
    path = tmp_path / "f.vtk"
    write_fields_vtk(fields, path)
    mesh = meshio.read(path)
    for name, v in fields.items():
        got = np.concatenate(mesh.cell_data[name]).ravel()
        assert np.array_equal(got, v.T.ravel())


def test_vtk_small_grid_counts(tmp_path):
    path = tmp_path / "f.vtk"
    write_fields_vtk({"rho": np.arange(4.0).reshape(2, 2)}, path)
    text = path.read_text()
    assert "CELL_DATA 4" in text and "DIMENSIONS 3 3 1" in text
    assert text.strip().splitlines()[-1].split() == ["0.0", "2.0", "1.0", "3.0"]
    with pytest.raises(ValueError):
        write_fields_vtk({"a": np.zeros((2, 2)), "b": np.zeros((2, 3))}, path)


def test_trace_csv(tmp_path):
    t = OptimizationTrace(["g_local", "g_total"])
    for i in range(1, 4):
        t.append(IterationRecord(i, 10.0 / i, [-0.1, 0.0], 0.5, 1.0, 0.2, 7, 0.25 * i))
    path = tmp_path / "t.csv"
    write_trace_csv(t, path)
    rows = list(csv.reader(path.open()))
    assert len(rows) == 4
    assert rows[0] == ["iter", "compliance", "g_local", "g_total", "sharpness", "beta", "delta", "fem_iters",
                       "seconds"]
    assert rows[2][:2] == ["2", "5.0"] and rows[2][-1] == "0.500"
    write_trace_csv(t, path, wall_time=False)
    assert list(csv.reader(path.open()))[1][-1] == ""
    with pytest.raises(ValueError):
        write_trace_csv(OptimizationTrace(["g_local"]), path)


def _run(tmp_path, name, *extra):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL)
    out = tmp_path / name
    assert main(["optimize", str(cfg), "--out", str(out), "--quiet", *extra]) == 0
    return out


def test_optimize_outputs_and_determinism(tmp_path):
    a = _run(tmp_path, "a")
    b = _run(tmp_path, "b", "--threads", "1")
    names = sorted(p.name for p in a.iterdir())
    assert names == ["config.resolved.yaml", "density.npy", "density.pgm", "density.pgm.json", "fields.vtk",
                     "snapshots", "summary.json", "trace.csv"]
    for n in names[:-1]:
        if n != "snapshots":
            assert (a / n).read_bytes() == (b / n).read_bytes(), n
    assert sorted(p.name for p in (a / "snapshots").iterdir()) == ["rho_0005.pgm", "rho_0005.pgm.json",
                                                                    "rho_0010.pgm", "rho_0010.pgm.json"]
    assert parse_config((a / "config.resolved.yaml").read_text()) == parse_config(SMALL)
    mesh = meshio.read(a / "fields.vtk")
    assert {"rho", "rho_bar", "dc_drho", "von_mises", "s1", "s2", "theta"} <= set(mesh.cell_data)
    assert np.all(np.concatenate(mesh.cell_data["dc_drho"]) <= 0)


def test_analyze_and_reference_commands(tmp_path):
    a = _run(tmp_path, "a")
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL + "analysis:\n  damage_side: 4\n  angles_deg: [0, 90, 360]\n  target_volume: 0.5\n"
                   "  grid_pitch: 4\n")
    assert main(["analyze", "damage", str(cfg), str(a / "density.npy"), "--out", str(tmp_path / "d"),
                 "--quiet"]) == 0
    rows = list(csv.DictReader((tmp_path / "d" / "damage.csv").open()))
    assert rows and all(float(r["after"]) > 0 for r in rows)
    assert main(["analyze", "rotate", str(cfg), str(a / "density.pgm"), "--out", str(tmp_path / "r"),
                 "--quiet"]) == 0
    rows = list(csv.DictReader((tmp_path / "r" / "rotation.csv").open()))
    assert [r["angle_deg"] for r in rows] == ["0.0", "90.0", "360.0"]
    assert float(rows[2]["after"]) == pytest.approx(float(rows[0]["after"]), rel=1e-9)
    assert main(["reference", "grid", str(cfg), "--out", str(tmp_path / "g"), "--quiet"]) == 0
    assert np.load(tmp_path / "g" / "reference.npy").mean() == pytest.approx(0.5, abs=1 / 288)


def test_cli_error_exit_codes(tmp_path, caplog):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(MINIMAL.replace("alpha: 0.6", "alpa: 0.6"))
    assert main(["optimize", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "did you mean 'alpha'" in caplog.text
    assert main(["optimize", str(tmp_path / "missing.yaml")]) == 2
    good = tmp_path / "c.yaml"
    good.write_text(SMALL)
    wrong = tmp_path / "w.npy"
    np.save(wrong, np.zeros((3, 3)))
    assert main(["analyze", "damage", str(good), str(wrong), "--quiet"]) == 2


def test_domain_mask_and_shell(tmp_path):
    pix = np.full((12, 24), 255, np.uint8)
    pix[2:10, 2:22] = 0
    cli.write_pgm(pix, tmp_path / "dom.pgm")
    text = SMALL.replace("preset: cantilever", "domain: dom.pgm\n  shell: 1.0\n  supports:\n    - {edge: left}\n"
                         "  loads:\n    - {node: [22, 6], fy: -1}")
    (tmp_path / "c.yaml").write_text(text)
    pb = build_problem(parse_config(text), tmp_path)
    assert pb.inside.sum() == 8 * 20
    assert pb.passive.sum() == 8 * 20 - 6 * 18
