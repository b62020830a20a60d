"""Command-line front end and file formats.

Config files are YAML with the sections ``problem``, ``optimization``,
``material``, ``solver``, ``output`` and ``analysis``. Every key has a
default except ``problem.nx`` / ``problem.ny``; see ``render`` output (or the
README) for the full resolved form.
"""
from __future__ import annotations

import argparse
import csv
import difflib
import io
import json
import logging
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger("infillopt")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- schema

@dataclass(frozen=True)
class _Key:
    kind: str
    default: object = None
    lo: float | None = None
    hi: float | None = None
    lo_open: bool = False
    hi_open: bool = False
    optional: bool = False
    choices: tuple | None = None


def _num(kind, default, lo=None, hi=None, lo_open=False, hi_open=False, optional=False):
    return _Key(kind, default, lo, hi, lo_open, hi_open, optional)


SCHEMA: dict[str, dict[str, _Key]] = {
    "problem": {
        "nx": _num("int", None, 1),
        "ny": _num("int", None, 1),
        "preset": _Key("str", None, optional=True, choices=(
            "cantilever", "half_mbb", "mbb", "clamped_column", "tension_bar")),
        "supports": _Key("supports", []),
        "loads": _Key("loads", []),
        "domain": _Key("str", None, optional=True),
        "shell": _num("float", 0.0, 0.0),
    },
    "optimization": {
        "alpha": _num("float", 0.6, 0.0, 1.0, lo_open=True, optional=True),
        "alpha_total": _num("float", None, 0.0, 1.0, lo_open=True, optional=True),
        "R": _num("float", 6.0, 0.0, lo_open=True),
        "r": _num("float", 2.0, 0.0, lo_open=True),
        "p": _num("float", 16.0, 2.0),
        "penal": _num("float", 3.0, 1.0),
        "beta0": _num("float", 1.0, 1.0),
        "beta_period": _num("int", 40, 1),
        "beta_max": _num("float", 512.0, 1.0),
        "eps": _num("float", 0.01, 0.0, lo_open=True),
        "max_iter": _num("int", 500, 1),
        "anisotropic": _Key("bool", False),
        "lobe_long": _num("float", None, 0.0, lo_open=True, optional=True),
        "lobe_short": _num("float", None, 0.0, optional=True),
        "move": _num("float", 0.2, 0.0, 1.0, lo_open=True),
    },
    "material": {
        "E0": _num("float", 1.0, 0.0, lo_open=True),
        "Emin": _num("float", 1e-9, 0.0, lo_open=True),
        "nu": _num("float", 0.3, -1.0, 0.5, lo_open=True, hi_open=True),
    },
    "solver": {
        "tol": _num("float", 1e-6, 0.0, 1.0, lo_open=True, hi_open=True),
        "max_iter": _num("int", 5000, 1),
        "preconditioner": _Key("str", "cholesky", choices=("cholesky", "multigrid", "jacobi", "direct")),
    },
    "output": {
        "dir": _Key("str", "out"),
        "snapshot_every": _num("int", 0, 0),
        "formats": _Key("formats", ["pgm", "npy", "vtk", "csv"]),
        "wall_time": _Key("bool", True),
    },
    "analysis": {
        "damage_side": _num("int", None, 1, optional=True),
        "damage_step": _num("int", None, 1, optional=True),
        "damage_column": _num("int", None, 0, optional=True),
        "angles_deg": _Key("floats", [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0]),
        "grid_pitch": _num("int", 10, 2),
        "grid_width": _num("int", 1, 1),
        "target_volume": _num("float", None, 0.0, 1.0, lo_open=True, optional=True),
    },
}

_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")

FORMATS = ("pgm", "npy", "vtk", "csv")
EDGES = ("left", "right", "top", "bottom")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration: ``sections[name][key]`` for every schema key."""

    sections: dict

    def __getitem__(self, name):
        return self.sections[name]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.sections == other.sections


def _line_map(text):
    """Map key paths to 1-based source lines."""
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[path + (i,)] = v.start_mark.line + 1
                walk(v, path + (i,))

    root = yaml.compose(text, Loader=yaml.SafeLoader)
    if root is not None:
        walk(root, ())
    return lines


class _Checker:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, path, msg):
        where = ".".join(str(p) for p in path)
        line = None
        for k in range(len(path), 0, -1):
            line = self.lines.get(tuple(path[:k]))
            if line is not None:
                break
        anchor = f"line {line}: " if line is not None else ""
        raise ConfigError(f"{anchor}{where}: {msg}")

    def unknown(self, path, key, allowed):
        hint = difflib.get_close_matches(str(key), list(allowed), n=1)
        extra = f" (did you mean {hint[0]!r}?)" if hint else ""
        self.fail(path + (key,), f"unknown key {key!r}{extra}")

    def scalar(self, path, spec: _Key, v):
        if v is None:
            if spec.optional:
                return None
            self.fail(path, "a value is required")
        if spec.kind == "bool":
            if not isinstance(v, bool):
                self.fail(path, f"expected true/false, got {v!r}")
            return v
        if spec.kind == "str":
            if not isinstance(v, str):
                self.fail(path, f"expected a string, got {v!r}")
            if spec.choices and v not in spec.choices:
                self.fail(path, f"must be one of {', '.join(spec.choices)}; got {v!r}")
            return v
        if isinstance(v, str) and _NUMBER.fullmatch(v.strip()):
            # YAML 1.1 reads exponent forms without a dot (1e-9) as strings
            v = float(v)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        if spec.kind == "int":
            if isinstance(v, float) and not v.is_integer():
                self.fail(path, f"expected an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
            if not math.isfinite(v):
                self.fail(path, "must be finite")
        lo_bad = spec.lo is not None and (v <= spec.lo if spec.lo_open else v < spec.lo)
        hi_bad = spec.hi is not None and (v >= spec.hi if spec.hi_open else v > spec.hi)
        if lo_bad or hi_bad:
            lo = "-inf" if spec.lo is None else f"{spec.lo:g}"
            hi = "inf" if spec.hi is None else f"{spec.hi:g}"
            rng = f"{'(' if spec.lo_open or spec.lo is None else '['}{lo}, {hi}{')' if spec.hi_open or spec.hi is None else ']'}"
            self.fail(path, f"value {v!r} out of range {rng}")
        return v

    def node(self, path, v, n_axes=2):
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(a, int) and not isinstance(a, bool)
                                                             for a in v)):
            self.fail(path, f"expected node grid coordinates [i, j], got {v!r}")
        return [int(v[0]), int(v[1])]

    def supports(self, path, v):
        if not isinstance(v, list):
            self.fail(path, "expected a list of supports")
        out = []
        for k, item in enumerate(v):
            p = path + (k,)
            if not isinstance(item, dict):
                self.fail(p, "expected a mapping with 'edge' or 'node'")
            for key in item:
                if key not in ("edge", "node", "axes"):
                    self.unknown(p, key, ("edge", "node", "axes"))
            if ("edge" in item) == ("node" in item):
                self.fail(p, "give exactly one of 'edge' or 'node'")
            axes = item.get("axes", "xy")
            if axes not in ("x", "y", "xy"):
                self.fail(p + ("axes",), f"axes must be x, y or xy; got {axes!r}")
            if "edge" in item:
                if item["edge"] not in EDGES:
                    self.fail(p + ("edge",), f"edge must be one of {', '.join(EDGES)}; got {item['edge']!r}")
                out.append({"edge": item["edge"], "axes": axes})
            else:
                out.append({"node": self.node(p + ("node",), item["node"]), "axes": axes})
        return out

    def loads(self, path, v):
        if not isinstance(v, list):
            self.fail(path, "expected a list of loads")
        out = []
        for k, item in enumerate(v):
            p = path + (k,)
            if not isinstance(item, dict):
                self.fail(p, "expected a mapping with 'node', 'fx', 'fy'")
            for key in item:
                if key not in ("node", "fx", "fy"):
                    self.unknown(p, key, ("node", "fx", "fy"))
            if "node" not in item:
                self.fail(p, "load needs a 'node'")
            f = _Key("float", 0.0)
            out.append({"node": self.node(p + ("node",), item["node"]),
                        "fx": self.scalar(p + ("fx",), f, item.get("fx", 0.0)),
                        "fy": self.scalar(p + ("fy",), f, item.get("fy", 0.0))})
        return out

    def value(self, path, spec: _Key, v):
        if spec.kind == "supports":
            return self.supports(path, v)
        if spec.kind == "loads":
            return self.loads(path, v)
        if spec.kind == "formats":
            if not isinstance(v, list) or any(x not in FORMATS for x in v):
                self.fail(path, f"formats must be a list drawn from {', '.join(FORMATS)}")
            return list(v)
        if spec.kind == "floats":
            if not isinstance(v, list):
                self.fail(path, "expected a list of numbers")
            return [self.scalar(path + (k,), _Key("float"), x) for k, x in enumerate(v)]
        return self.scalar(path, spec, v)


def parse_config(text: str) -> RunConfig:
    """Validate and resolve a YAML config; raises ``ConfigError`` with a line anchor."""
    try:
        data = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    chk = _Checker(lines)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    for sec in data:
        if sec not in SCHEMA:
            chk.unknown((), sec, SCHEMA)
    out = {}
    for sec, keys in SCHEMA.items():
        given = data.get(sec) or {}
        if not isinstance(given, dict):
            chk.fail((sec,), "expected a mapping")
        for k in given:
            if k not in keys:
                chk.unknown((sec,), k, keys)
        resolved = {}
        for k, spec in keys.items():
            if k in given:
                resolved[k] = chk.value((sec, k), spec, given[k])
            elif spec.default is None and not spec.optional:
                chk.fail((sec, k), "missing required key")
            else:
                resolved[k] = spec.default if not isinstance(spec.default, list) else list(spec.default)
        out[sec] = resolved
    _cross_check(out, chk)
    return RunConfig(out)


def _cross_check(c, chk):
    pr, op = c["problem"], c["optimization"]
    if pr["preset"] is None and (not pr["supports"] or not pr["loads"]):
        chk.fail(("problem",), "give a preset or at least one support and one load")
    if pr["preset"] is not None and (pr["supports"] or pr["loads"]):
        chk.fail(("problem", "preset"), "a preset defines its own supports and loads; drop them or the preset")
    nx, ny = pr["nx"], pr["ny"]
    for k, ld in enumerate(pr["loads"]):
        i, j = ld["node"]
        if not (0 <= i <= nx and 0 <= j <= ny):
            chk.fail(("problem", "loads", k, "node"), f"node {ld['node']} outside the {nx}x{ny} grid")
    for k, sp in enumerate(pr["supports"]):
        if "node" in sp:
            i, j = sp["node"]
            if not (0 <= i <= nx and 0 <= j <= ny):
                chk.fail(("problem", "supports", k, "node"), f"node {sp['node']} outside the {nx}x{ny} grid")
    if op["alpha"] is None and op["alpha_total"] is None:
        chk.fail(("optimization", "alpha"), "need alpha, alpha_total or both")
    if op["alpha"] is not None and not op["r"] < op["R"]:
        chk.fail(("optimization", "r"), f"filter radius r={op['r']} must be below R={op['R']}")
    if op["beta_max"] < op["beta0"]:
        chk.fail(("optimization", "beta_max"), "beta_max must be >= beta0")
    if not c["material"]["Emin"] < c["material"]["E0"]:
        chk.fail(("material", "Emin"), "Emin must be below E0")


def _yaml_float(x: float) -> str:
    s = repr(float(x))
    mant, e, exp = s.partition("e")
    if e and "." not in mant:
        s = f"{mant}.0e{exp}"
    return s


def _yaml_scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _yaml_float(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, list):
        return "[" + ", ".join(_yaml_scalar(x) for x in v) + "]"
    return json.dumps(v)


def render(config: RunConfig) -> str:
    """Resolved config as YAML; ``parse_config(render(c)) == c``."""
    out = io.StringIO()
    for sec, keys in SCHEMA.items():
        out.write(f"{sec}:\n")
        for k in keys:
            v = config[sec][k]
            if isinstance(v, list) and v and isinstance(v[0], dict):
                out.write(f"  {k}:\n")
                for item in v:
                    body = ", ".join(f"{a}: {_yaml_scalar(b)}" for a, b in item.items())
                    out.write(f"    - {{{body}}}\n")
            else:
                out.write(f"  {k}: {_yaml_scalar(v)}\n")
    return out.getvalue()


# ------------------------------------------------- config -> model objects

def read_mask_image(path, nx, ny):
    """Domain mask from a PGM: dark pixels (< 128) are inside."""
    pix = read_pgm(path)
    if pix.shape != (ny, nx):
        raise ConfigError(f"domain image {path} is {pix.shape[1]}x{pix.shape[0]}, grid is {nx}x{ny}")
    return (pix[::-1].T < 128)


def build_problem(config: RunConfig, base_dir: Path | None = None):
    from .grid import (AXES, PRESETS, BoundaryConditions, DesignProblem, Load, build_grid, edge_nodes,
                       node_dofs, passive_from_distance)

    pr = config["problem"]
    nx, ny = pr["nx"], pr["ny"]
    if pr["preset"] is not None:
        base = PRESETS[pr["preset"]](nx, ny)
        grid, bc = base.grid, base.bc
    else:
        grid = build_grid(nx, ny)
        fixed = []
        for sp in pr["supports"]:
            nodes = edge_nodes(grid, sp["edge"]) if "edge" in sp else grid.node_id(*sp["node"])
            fixed.append(node_dofs(nodes, sp["axes"]))
        loads = []
        for ld in pr["loads"]:
            node = grid.node_id(*ld["node"])
            for ax, key in (("x", "fx"), ("y", "fy")):
                if ld[key] != 0.0:
                    loads.append(Load(node, AXES[ax], ld[key]))
        bc = BoundaryConditions(np.unique(np.concatenate(fixed)), loads)
    inside = None
    if pr["domain"] is not None:
        p = Path(pr["domain"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        inside = read_mask_image(p, nx, ny)
    passive = passive_from_distance(grid, inside, pr["shell"]).is_passive
    return DesignProblem(grid, bc, inside, passive, name=pr["preset"] or "custom")


def build_opt_config(config: RunConfig):
    from .optimizer import OptimizationConfig

    op, mat, sol = config["optimization"], config["material"], config["solver"]
    return OptimizationConfig(
        alpha=op["alpha"], alpha_total=op["alpha_total"], R=op["R"], r=op["r"], p=op["p"],
        penal=op["penal"], beta0=op["beta0"], beta_period=op["beta_period"], beta_max=op["beta_max"],
        eps=op["eps"], max_iter=op["max_iter"], anisotropic=op["anisotropic"], lobe_long=op["lobe_long"],
        lobe_short=op["lobe_short"], move=op["move"], E0=mat["E0"], Emin=mat["Emin"], nu=mat["nu"],
        solver_tol=sol["tol"], solver_max_iter=sol["max_iter"], preconditioner=sol["preconditioner"])


# ---------------------------------------------------------------- writers

def density_pixels(rho) -> np.ndarray:
    """8-bit gray levels, solid black: ``floor(255 (1 - rho) + 0.5)``, top row first."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2:
        raise ValueError("density must be a 2D (nx, ny) field")
    if np.any(~np.isfinite(rho)) or rho.min() < 0 or rho.max() > 1:
        raise ValueError("density values must lie in [0, 1]")
    return np.floor(255.0 * (1.0 - rho) + 0.5).astype(np.uint8).T[::-1]


def write_pgm(pixels: np.ndarray, path):
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise ValueError(f"{path}: only 8-bit binary PGM (P5, maxval 255) is supported")
    w, h = int(fields[1]), int(fields[2])
    body = data[pos + 1:pos + 1 + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: truncated image data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def write_density_image(rho, path, meta: dict | None = None):
    """PGM image plus a JSON sidecar (``<path>.json``) with grid size and ``meta``."""
    path = Path(path)
    write_pgm(density_pixels(rho), path)
    nx, ny = np.shape(rho)
    side = {"nx": int(nx), "ny": int(ny), "encoding": "P5 8-bit, gray = floor(255*(1-rho)+0.5), top row first"}
    side.update(meta or {})
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_density(path) -> np.ndarray:
    """Density from ``.npy`` (exact) or ``.pgm`` (8-bit, sidecar-checked)."""
    path = Path(path)
    if path.suffix == ".npy":
        rho = np.load(path)
        if rho.ndim != 2:
            raise ValueError(f"{path}: expected a 2D array")
        return rho.astype(float)
    pix = read_pgm(path)
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        if (meta.get("nx"), meta.get("ny")) != (pix.shape[1], pix.shape[0]):
            raise ValueError(f"{path}: image size disagrees with its sidecar")
    return 1.0 - pix[::-1].T.astype(float) / 255.0


def write_fields_vtk(fields: dict, path, title: str = "infill fields"):
    """Legacy ASCII STRUCTURED_POINTS file with one cell-data array per field."""
    if not fields:
        raise ValueError("no fields to write")
    shapes = {np.shape(v) for v in fields.values()}
    if len(shapes) != 1:
        raise ValueError("all fields must share one grid")
    nx, ny = shapes.pop()
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx + 1} {ny + 1} 1\nORIGIN 0 0 0\nSPACING 1 1 1\n")
        fh.write(f"CELL_DATA {nx * ny}\n")
        for name, v in fields.items():
            if any(c.isspace() for c in name):
                raise ValueError(f"field name {name!r} contains whitespace")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            # VTK cell order runs x fastest
            vals = np.asarray(v, dtype=float).T.ravel()
            for k in range(0, vals.size, 6):
                fh.write(" ".join(repr(float(x)) for x in vals[k:k + 6]) + "\n")


def write_trace_csv(trace, path, wall_time: bool = True):
    """One row per iteration. With ``wall_time=False`` the seconds column is
    left empty so repeated runs give identical files."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "compliance", *trace.constraint_names, "sharpness", "beta", "delta",
                    "fem_iters", "seconds"])
        for r in trace.records:
            w.writerow([r.iteration, repr(r.compliance), *(repr(g) for g in r.g), repr(r.sharpness),
                        repr(r.beta), repr(r.delta), r.fem_iterations,
                        f"{r.seconds:.3f}" if wall_time else ""])


def write_report_csv(report, path, extra_cols=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["case", *(extra_cols or {}).keys(), "before", "after", "ratio", "converged", "residual"]
        w.writerow(head)
        for k, c in enumerate(report.cases):
            extra = [col[k] for col in (extra_cols or {}).values()]
            w.writerow([c.case_id, *extra, repr(c.before), repr(c.after), repr(c.ratio), int(c.converged),
                        repr(c.residual)])


def _save_density(rho, out: Path, stem: str, formats, meta):
    if "pgm" in formats:
        write_density_image(rho, out / f"{stem}.pgm", meta)
    if "npy" in formats:
        np.save(out / f"{stem}.npy", np.asarray(rho, dtype=float))


# ---------------------------------------------------------------- commands

def _load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_optimize(args, config: RunConfig, base_dir: Path):
    from .fem import element_energy, element_stiffness, element_stress, young_modulus, young_modulus_derivative
    from .optimizer import OptimizationAborted, run

    problem = build_problem(config, base_dir)
    opt = build_opt_config(config)
    outc = config["output"]
    out = Path(args.out or outc["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(render(config))
    every = args.snapshot_every if args.snapshot_every is not None else outc["snapshot_every"]
    wall = outc["wall_time"] and not args.no_wall_time
    formats = outc["formats"]

    def snapshot(i, phi, ev):
        if every and i % every == 0:
            snap = out / "snapshots"
            snap.mkdir(exist_ok=True)
            write_density_image(ev.rho, snap / f"rho_{i:04d}.pgm", {"iteration": i})

    try:
        res = run(problem, opt, callback=snapshot if every else None)
    except OptimizationAborted as exc:
        if "csv" in formats and len(exc.trace):
            write_trace_csv(exc.trace, out / "trace.csv", wall)
        log.error("%s", exc)
        return 3
    meta = {"alpha": opt.alpha, "alpha_total": opt.alpha_total, "iterations": res.iterations,
            "compliance": res.compliance, "volume": res.volume, "converged": res.converged}
    _save_density(res.rho, out, "density", formats, meta)
    if "csv" in formats:
        write_trace_csv(res.trace, out / "trace.csv", wall)
    if "vtk" in formats:
        E = young_modulus(res.rho, opt.material)
        st = element_stress(res.u, E, opt.nu)
        fields = {"rho": res.rho, "phi": res.phi, "phi_tilde": res.phi_tilde}
        for name, rb in zip(("rho_bar", "rho_bar_y") if opt.anisotropic else ("rho_bar",), res.rho_bar):
            fields[name] = rb
        fields["dc_drho"] = -young_modulus_derivative(res.rho, opt.material) * element_energy(
            res.u, element_stiffness(opt.nu))
        fields.update({"von_mises": st["von_mises"], "s1": st["s1"], "s2": st["s2"], "theta": st["theta"]})
        write_fields_vtk(fields, out / "fields.vtk")
    (out / "summary.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    log.info("compliance %.6g  volume %.4f  iterations %d  converged %s", res.compliance, res.volume,
             res.iterations, res.converged)
    return 0


def _material(config):
    from .fem import MaterialModel

    m = config["material"]
    return MaterialModel(m["E0"], m["Emin"], config["optimization"]["penal"], m["nu"])


def _density_for(problem, path):
    rho = read_density(path)
    if rho.shape != problem.grid.element_shape:
        raise ConfigError(f"{path}: density is {rho.shape[0]}x{rho.shape[1]}, grid is "
                          f"{problem.grid.nx}x{problem.grid.ny}")
    return rho


def cmd_damage(args, config, base_dir):
    from .analysis import damage_sweep

    problem = build_problem(config, base_dir)
    rho = _density_for(problem, args.density)
    an = config["analysis"]
    side = an["damage_side"] or int(round(2 * config["optimization"]["R"]))
    rep = damage_sweep(rho, problem, side, column=an["damage_column"], step=an["damage_step"],
                       material=_material(config), tol=config["solver"]["tol"])
    out = Path(args.out or config["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    anchors = [c.case_id.split("@")[1].split(",") for c in rep.cases]
    write_report_csv(rep, out / "damage.csv", {"i": [a[0] for a in anchors], "j": [a[1] for a in anchors]})
    if rep.cases:
        w = rep.worst
        log.info("%d positions, worst %s: %.6g -> %.6g (x%.3g)", len(rep.cases), w.case_id, w.before, w.after,
                 w.ratio)
    return 0


def cmd_rotate(args, config, base_dir):
    from .analysis import force_rotation_sweep

    problem = build_problem(config, base_dir)
    rho = _density_for(problem, args.density)
    deg = config["analysis"]["angles_deg"]
    rep = force_rotation_sweep(rho, problem, np.radians(deg), _material(config), config["solver"]["tol"])
    out = Path(args.out or config["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(rep, out / "rotation.csv", {"angle_deg": [repr(float(d)) for d in deg]})
    for d, c in zip(deg, rep.cases):
        log.info("angle %7.2f deg  compliance %.6g", d, c.after)
    return 0


def cmd_reference(args, config, base_dir):
    from .analysis import make_regular_grid_infill

    problem = build_problem(config, base_dir)
    an = config["analysis"]
    target = an["target_volume"] or config["optimization"]["alpha_total"] or config["optimization"]["alpha"]
    rho = make_regular_grid_infill(problem, target, an["grid_pitch"], an["grid_width"])
    out = Path(args.out or config["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    vol = float(rho[problem.inside].mean())
    _save_density(rho, out, "reference", config["output"]["formats"] or ["npy"],
                  {"pitch": an["grid_pitch"], "target_volume": target, "volume": vol})
    log.info("regular grid: pitch %d, volume %.4f", an["grid_pitch"], vol)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    common.add_argument("-v", "--verbose", action="store_true", help="log every iteration")

    ap = argparse.ArgumentParser(prog="infillopt", description="Porous infill by local volume constraints.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("optimize", parents=[common], help="run the optimization")
    p.add_argument("config")
    p.add_argument("--snapshot-every", type=int, default=None, metavar="K",
                   help="write the density image every K iterations")
    p.add_argument("--no-wall-time", action="store_true",
                   help="leave the trace seconds column empty (byte-reproducible output)")
    p.set_defaults(func=cmd_optimize)

    an = sub.add_parser("analyze", help="robustness sweeps on a finished design")
    asub = an.add_subparsers(dest="analysis", required=True)
    for name, fn, text in (("damage", cmd_damage, "slide a damage square through the design"),
                           ("rotate", cmd_rotate, "rotate the loads")):
        q = asub.add_parser(name, parents=[common], help=text)
        q.add_argument("config")
        q.add_argument("density", help="density .npy or .pgm")
        q.set_defaults(func=fn)

    ref = sub.add_parser("reference", help="reference structures")
    rsub = ref.add_subparsers(dest="kind", required=True)
    q = rsub.add_parser("grid", parents=[common], help="regular bar lattice of matching volume")
    q.add_argument("config")
    q.set_defaults(func=cmd_reference)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        log.error("--threads must be >= 1")
        return 2
    try:
        config = _load_config(args.config)
        if getattr(args, "snapshot_every", None) is not None and args.snapshot_every < 0:
            raise ConfigError("--snapshot-every must be >= 0")
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args, config, Path(args.config).resolve().parent)
        return args.func(args, config, Path(args.config).resolve().parent)
    except (ConfigError, ValueError, OSError) as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
