"""Robustness harnesses and field statistics for finished designs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import FemSystem, MaterialModel, element_energy, young_modulus
from .grid import DesignProblem


@dataclass(frozen=True)
class DamageSpec:
    """Axis-aligned square of ``side`` elements with lower-left element ``anchor``."""

    anchor: tuple[int, int]
    side: int

    def mask(self, shape) -> np.ndarray:
        i, j = self.anchor
        if self.side < 1 or i < 0 or j < 0 or i + self.side > shape[0] or j + self.side > shape[1]:
            raise ValueError(f"damage square {self} does not fit the {shape[0]}x{shape[1]} grid")
        m = np.zeros(shape, bool)
        m[i:i + self.side, j:j + self.side] = True
        return m


@dataclass
class RobustnessCase:
    case_id: str
    before: float
    after: float
    converged: bool = True
    residual: float = 0.0

    @property
    def ratio(self) -> float:
        return self.after / self.before


@dataclass
class RobustnessReport:
    cases: list = field(default_factory=list)

    @property
    def after(self) -> np.ndarray:
        return np.array([c.after for c in self.cases])

    @property
    def ratios(self) -> np.ndarray:
        return np.array([c.ratio for c in self.cases])

    @property
    def worst(self) -> RobustnessCase:
        return max(self.cases, key=lambda c: c.after)

    @property
    def variance(self) -> float:
        return float(np.var(self.after))


class _Evaluator:
    """Compliance of fixed designs under one set of supports; reuses the solver."""

    def __init__(self, problem: DesignProblem, material: MaterialModel, tol: float):
        self.problem = problem
        self.material = material
        self.tol = tol
        self._systems = {}

    def __call__(self, rho, bc=None):
        bc = self.problem.bc if bc is None else bc
        key = id(bc)
        sys_ = self._systems.get(key)
        if sys_ is None:
            sys_ = FemSystem(self.problem.grid, bc, self.material, tol=self.tol)
            self._systems = {key: sys_}
        E = young_modulus(rho, self.material)
        sys_.set_modulus(E)
        u = sys_.solve(raise_on_fail=False)
        info = sys_.last_info
        return float(np.vdot(E, element_energy(u, sys_.k0))), info.converged, info.residual


def _check_density(rho, problem):
    rho = np.asarray(rho, dtype=float)
    if rho.shape != problem.grid.element_shape:
        raise ValueError(f"density shape {rho.shape} does not match grid {problem.grid.element_shape}")
    if rho.min() < 0 or rho.max() > 1:
        raise ValueError("density values must lie in [0, 1]")
    return rho


def damage_eval(rho, problem: DesignProblem, damage: DamageSpec, material: MaterialModel = MaterialModel(),
                tol: float = 1e-6, baseline: float | None = None, _ev=None) -> RobustnessCase:
    """Knock the modulus inside ``damage`` down to ``Emin`` and re-solve.

    A damaged design that no longer carries the load shows up as
    ``converged=False`` with the final residual rather than as an exception.
    """
    rho = _check_density(rho, problem)
    ev = _ev or _Evaluator(problem, material, tol)
    if baseline is None:
        baseline, _, _ = ev(rho)
    damaged = np.where(damage.mask(rho.shape), 0.0, rho)
    after, ok, res = ev(damaged)
    return RobustnessCase(f"damage@{damage.anchor[0]},{damage.anchor[1]}", baseline, after, ok, res)


def _load_elements(problem: DesignProblem) -> np.ndarray:
    """Elements touching a loaded node; damage there says nothing about the infill."""
    g = problem.grid
    m = np.zeros(g.element_shape, bool)
    for ld in problem.bc.loads:
        i, j = divmod(ld.node, g.ny + 1)
        m[max(i - 1, 0):i + 1, max(j - 1, 0):j + 1] = True
    return m


def damage_sweep(rho, problem: DesignProblem, side: int, anchors=None, column: int | None = None,
                 step: int | None = None, material: MaterialModel = MaterialModel(), tol: float = 1e-6,
                 skip_loaded: bool = True) -> RobustnessReport:
    """Compliance for a damage square placed at each anchor in turn.

    Without explicit ``anchors`` the square moves from the top of the domain
    downwards in ``step`` increments (default ``side // 2``) at column
    ``column`` (default: centred). Squares covering a loaded node are skipped
    when ``skip_loaded`` is set.
    """
    rho = _check_density(rho, problem)
    nx, ny = rho.shape
    if anchors is None:
        step = step or max(side // 2, 1)
        i0 = (nx - side) // 2 if column is None else column
        anchors = [(i0, j) for j in range(ny - side, -1, -step)]
    ev = _Evaluator(problem, material, tol)
    base, _, _ = ev(rho)
    loaded = _load_elements(problem) if skip_loaded else None
    report = RobustnessReport()
    for a in anchors:
        spec = DamageSpec(tuple(int(v) for v in a), side)
        if loaded is not None and np.any(spec.mask(rho.shape) & loaded):
            continue
        report.cases.append(damage_eval(rho, problem, spec, material, tol, base, ev))
    return report


def damage_grid_anchors(shape, side: int, step: int):
    """All anchors on a regular lattice of spacing ``step`` that fit the grid."""
    nx, ny = shape
    return [(i, j) for i in range(0, nx - side + 1, step) for j in range(0, ny - side + 1, step)]


def force_rotation_sweep(rho, problem: DesignProblem, angles, material: MaterialModel = MaterialModel(),
                         tol: float = 1e-6) -> RobustnessReport:
    """Compliance of a fixed design with every load rotated by each angle (radians)."""
    rho = _check_density(rho, problem)
    ev = _Evaluator(problem, material, tol)
    base, _, _ = ev(rho)
    report = RobustnessReport()
    for a in angles:
        c, ok, res = ev(rho, problem.bc.rotated(float(a)))
        report.cases.append(RobustnessCase(f"angle={float(a):.6g}", base, c, ok, res))
    return report


def make_regular_grid_infill(problem: DesignProblem, target_volume: float, bar_pitch: int,
                             bar_width: int = 1) -> np.ndarray:
    """Axis-aligned bar lattice with in-domain volume fraction ``target_volume``.

    Bars of ``bar_width`` run along every ``bar_pitch``-th row and column.
    The remaining gap is closed by thickening horizontal bars upward one
    element at a time, lowest bar first, so the volume matches to within one
    element.
    """
    if bar_pitch < 2:
        raise ValueError("bar pitch must be at least 2 voxels")
    if not 0 < target_volume <= 1:
        raise ValueError("target volume must lie in (0, 1]")
    if not 1 <= bar_width < bar_pitch:
        raise ValueError("bar width must be in [1, pitch)")
    nx, ny = problem.grid.element_shape
    inside, passive = problem.inside, problem.passive
    n = int(inside.sum())
    target = int(round(target_volume * n))
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    rho = ((i % bar_pitch < bar_width) | (j % bar_pitch < bar_width) | passive) & inside
    if rho.sum() > target:
        raise ValueError(f"pitch {bar_pitch} with width {bar_width} already exceeds volume {target_volume}")
    # thickening order: layer k above every horizontal bar, bottom bar first, left to right
    free = inside & ~rho
    layer = j % bar_pitch - bar_width
    bar = j // bar_pitch
    order = np.lexsort((i[free], bar[free], layer[free]))
    cand = np.flatnonzero(free.ravel())[order]
    need = target - int(rho.sum())
    if need > cand.size:
        raise ValueError("target volume not reachable inside the domain")
    flat = rho.ravel()
    flat[cand[:need]] = True
    return flat.reshape(rho.shape).astype(float)


def histogram(values, bins: int = 10, mask=None) -> np.ndarray:
    """Counts over ``[0, 1]`` in ``bins`` equal bins (last bin closed)."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    v = np.asarray(values, dtype=float)
    if mask is not None:
        v = v[np.asarray(mask, bool)]
    counts, _ = np.histogram(np.clip(v.ravel(), 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return counts
