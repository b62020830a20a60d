"""Regular 2D grid, boundary conditions, passive shells and problem setup.

Conventions used throughout the package:

* element ``(i, j)`` covers ``[i, i+1] x [j, j+1]`` in voxel units, ``j``
  grows upward; element fields are arrays of shape ``(nx, ny)`` whose C-order
  flattening is column-major with y fastest (``e = i * ny + j``);
* node ``(i, j)`` sits at ``(i, j)``; node id ``i * (ny + 1) + j``; nodal
  vectors have shape ``(nx + 1, ny + 1, 2)`` and dof id ``2 * node + axis``;
* element-local nodes run counter-clockwise from the lower-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AXES = {"x": 0, "y": 1}


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    element_size: float = 1.0

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def element_shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def nodal_shape(self) -> tuple[int, int, int]:
        return (self.nx + 1, self.ny + 1, 2)

    def node_id(self, i: int, j: int) -> int:
        return i * (self.ny + 1) + j

    def element_id(self, i: int, j: int) -> int:
        return i * self.ny + j

    def element_nodes(self) -> np.ndarray:
        """(n_elements, 4) node ids, counter-clockwise from lower-left."""
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        n0 = (i * (self.ny + 1) + j).ravel()
        return np.stack([n0, n0 + self.ny + 1, n0 + self.ny + 2, n0 + 1], axis=1)

    def element_dofs(self) -> np.ndarray:
        nodes = self.element_nodes()
        return np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 8)

    def centroids(self) -> tuple[np.ndarray, np.ndarray]:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        return i + 0.5, j + 0.5


def build_grid(nx: int, ny: int) -> Grid:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"grid dimensions must be positive integers, got {nx}x{ny}")
    return Grid(int(nx), int(ny))


@dataclass
class Load:
    node: int
    axis: int
    value: float


@dataclass
class BoundaryConditions:
    fixed_dofs: np.ndarray
    loads: list[Load]

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.intp))
        if self.fixed_dofs.size == 0:
            raise ValueError("at least one fixed dof is required")
        fixed = set(self.fixed_dofs.tolist())
        for ld in self.loads:
            if 2 * ld.node + ld.axis in fixed:
                raise ValueError(f"load on fixed dof (node {ld.node}, axis {ld.axis})")

    def fixed_mask(self, grid: Grid) -> np.ndarray:
        mask = np.zeros(grid.n_dofs, dtype=bool)
        mask[self.fixed_dofs] = True
        return mask.reshape(grid.nodal_shape)

    def force_vector(self, grid: Grid) -> np.ndarray:
        f = np.zeros(grid.n_dofs)
        for ld in self.loads:
            f[2 * ld.node + ld.axis] += ld.value
        return f.reshape(grid.nodal_shape)

    def rotated(self, angle: float) -> "BoundaryConditions":
        """Same supports, every nodal force vector rotated by ``angle`` radians."""
        forces: dict[int, np.ndarray] = {}
        for ld in self.loads:
            forces.setdefault(ld.node, np.zeros(2))[ld.axis] += ld.value
        c, s = np.cos(angle), np.sin(angle)
        loads = []
        for node, (fx, fy) in forces.items():
            loads.append(Load(node, 0, c * fx - s * fy))
            loads.append(Load(node, 1, s * fx + c * fy))
        out = BoundaryConditions.__new__(BoundaryConditions)
        out.fixed_dofs = self.fixed_dofs.copy()
        out.loads = loads
        return out


def edge_nodes(grid: Grid, edge: str) -> np.ndarray:
    nx, ny = grid.nx, grid.ny
    if edge == "left":
        return np.array([grid.node_id(0, j) for j in range(ny + 1)])
    if edge == "right":
        return np.array([grid.node_id(nx, j) for j in range(ny + 1)])
    if edge == "bottom":
        return np.array([grid.node_id(i, 0) for i in range(nx + 1)])
    if edge == "top":
        return np.array([grid.node_id(i, ny) for i in range(nx + 1)])
    raise ValueError(f"unknown edge {edge!r}")


def node_dofs(nodes, axes: str = "xy") -> np.ndarray:
    nodes = np.atleast_1d(np.asarray(nodes, dtype=np.intp))
    return np.concatenate([2 * nodes + AXES[a] for a in axes])


@dataclass
class PassiveMask:
    is_passive: np.ndarray
    shell_thickness: float = 0.0


def boundary_distance(inside: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each element centroid to the domain outline.

    The outline is the set of unit edges separating an inside element from an
    outside element or from the grid border. Brute force over all outline
    segments, chunked to bound memory. Outside elements get ``inf``.
    """
    inside = np.asarray(inside, dtype=bool)
    nx, ny = inside.shape
    pad = np.zeros((nx + 2, ny + 2), dtype=bool)
    pad[1:-1, 1:-1] = inside
    segs = []
    # vertical segments x = i, y in [j, j+1] between columns i-1 and i
    vx = pad[1:, 1:-1] != pad[:-1, 1:-1]
    ii, jj = np.nonzero(vx)
    segs.append(np.stack([ii, jj, ii, jj + 1], axis=1))
    hy = pad[1:-1, 1:] != pad[1:-1, :-1]
    ii, jj = np.nonzero(hy)
    segs.append(np.stack([ii, jj, ii + 1, jj], axis=1))
    seg = np.concatenate(segs).astype(float)

    dist = np.full((nx, ny), np.inf)
    ci, cj = np.nonzero(inside)
    if seg.size == 0 or ci.size == 0:
        return dist
    px = ci + 0.5
    py = cj + 0.5
    ax, ay, bx, by = seg.T
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    best = np.empty(ci.size)
    chunk = max(1, 4_000_000 // max(1, seg.shape[0]))
    for s in range(0, ci.size, chunk):
        qx = px[s:s + chunk, None]
        qy = py[s:s + chunk, None]
        t = np.clip(((qx - ax) * dx + (qy - ay) * dy) / ll, 0.0, 1.0)
        ex = ax + t * dx - qx
        ey = ay + t * dy - qy
        best[s:s + chunk] = np.sqrt((ex * ex + ey * ey).min(axis=1))
    dist[ci, cj] = best
    return dist


def passive_from_distance(grid: Grid, inside: np.ndarray | None, t: float) -> PassiveMask:
    """Elements whose centroid lies closer than ``t`` to the outline are passive."""
    if t < 0:
        raise ValueError("shell thickness must be non-negative")
    if inside is None:
        inside = np.ones(grid.element_shape, dtype=bool)
    inside = np.asarray(inside, dtype=bool)
    if inside.shape != grid.element_shape:
        raise ValueError("domain mask does not match grid")
    if t == 0:
        return PassiveMask(np.zeros(grid.element_shape, dtype=bool), 0.0)
    return PassiveMask(boundary_distance(inside) < t, float(t))


@dataclass
class DesignProblem:
    """Grid, supports, loads and the active/passive/outside partition."""

    grid: Grid
    bc: BoundaryConditions
    inside: np.ndarray = None
    passive: np.ndarray = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = self.grid.element_shape
        self.inside = np.ones(shape, bool) if self.inside is None else np.asarray(self.inside, bool)
        self.passive = np.zeros(shape, bool) if self.passive is None else np.asarray(self.passive, bool)
        if self.inside.shape != shape or self.passive.shape != shape:
            raise ValueError("mask shape does not match grid")
        self.passive = self.passive & self.inside

    @property
    def active(self) -> np.ndarray:
        return self.inside & ~self.passive

    def with_bc(self, bc: BoundaryConditions) -> "DesignProblem":
        return DesignProblem(self.grid, bc, self.inside, self.passive, self.name, dict(self.meta))


def cantilever(nx: int = 400, ny: int = 200, load: float = 1.0) -> DesignProblem:
    """Left edge clamped, downward point load at the middle of the right edge."""
    g = build_grid(nx, ny)
    fixed = node_dofs(edge_nodes(g, "left"))
    bc = BoundaryConditions(fixed, [Load(g.node_id(nx, ny // 2), 1, -load)])
    return DesignProblem(g, bc, name="cantilever")


def half_mbb(nx: int = 200, ny: int = 100, load: float = 1.0) -> DesignProblem:
    """Symmetry half of the MBB beam: x fixed on the left edge, roller at the
    bottom-right corner, downward load at the top-left corner."""
    g = build_grid(nx, ny)
    fixed = np.concatenate([node_dofs(edge_nodes(g, "left"), "x"), node_dofs(g.node_id(nx, 0), "y")])
    bc = BoundaryConditions(fixed, [Load(g.node_id(0, ny), 1, -load)])
    return DesignProblem(g, bc, name="half_mbb")


def mbb(nx: int = 120, ny: int = 40, load: float = 1.0) -> DesignProblem:
    """Full simply supported beam: pins at both bottom corners, central top load."""
    g = build_grid(nx, ny)
    fixed = np.concatenate([node_dofs(g.node_id(0, 0)), node_dofs(g.node_id(nx, 0), "y")])
    bc = BoundaryConditions(fixed, [Load(g.node_id(nx // 2, ny), 1, -load)])
    return DesignProblem(g, bc, name="mbb")


def clamped_column(nx: int = 200, ny: int = 100, load: float = 1.0) -> DesignProblem:
    """Bottom edge clamped, downward point load at the middle of the top edge.

    Used for force-rotation sweeps: unlike the half-MBB beam, a rotated load
    here is never absorbed by a support dof."""
    g = build_grid(nx, ny)
    fixed = node_dofs(edge_nodes(g, "bottom"))
    bc = BoundaryConditions(fixed, [Load(g.node_id(nx // 2, ny), 1, -load)])
    return DesignProblem(g, bc, name="clamped_column")


def tension_bar(nx: int = 200, ny: int = 100, load: float = 1.0) -> DesignProblem:
    """Left edge clamped, uniform horizontal traction on the right edge
    (total force ``load``, lumped to nodes)."""
    g = build_grid(nx, ny)
    fixed = node_dofs(edge_nodes(g, "left"))
    nodes = edge_nodes(g, "right")
    w = np.full(nodes.size, 1.0 / ny)
    w[[0, -1]] *= 0.5
    bc = BoundaryConditions(fixed, [Load(int(n), 0, load * wi) for n, wi in zip(nodes, w)])
    return DesignProblem(g, bc, name="tension_bar")


PRESETS = {
    "cantilever": cantilever,
    "half_mbb": half_mbb,
    "mbb": mbb,
    "clamped_column": clamped_column,
    "tension_bar": tension_bar,
}
