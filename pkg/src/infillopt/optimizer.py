"""Compliance minimisation under aggregated local (and optional total)
volume constraints with beta-continuation.

Objective values handed to MMA are divided by the first iteration's
compliance; everything recorded in the trace is unscaled.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .constraints import eval_local, eval_total, wall_bound
from .fem import FemSystem, MaterialModel, SolverError, element_energy, young_modulus, young_modulus_derivative
from .fields import (DensityFilter, LocalVolume, chain_backprop, counting_kernel, lobe_kernel, project,
                     smoothing_kernel)
from .grid import DesignProblem
from .mma import MmaState, mma_update

log = logging.getLogger(__name__)


class OptimizationAborted(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class OptimizationConfig:
    alpha: float | None = 0.6
    alpha_total: float | None = None
    R: float = 6.0
    r: float = 2.0
    p: float = 16.0
    penal: float = 3.0
    beta0: float = 1.0
    beta_period: int = 40
    beta_max: float = 512.0
    eps: float = 0.01
    max_iter: int = 500
    anisotropic: bool = False
    lobe_long: float | None = None
    lobe_short: float | None = None
    move: float = 0.2
    E0: float = 1.0
    Emin: float = 1e-9
    nu: float = 0.3
    solver_tol: float = 1e-6
    solver_max_iter: int = 5000
    preconditioner: str = "cholesky"

    def __post_init__(self):
        if self.alpha is None and self.alpha_total is None:
            raise ValueError("need a local limit alpha, a total limit alpha_total, or both")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.alpha_total is not None and not 0 < self.alpha_total <= 1:
            raise ValueError(f"alpha_total must lie in (0, 1], got {self.alpha_total}")
        if not 0 < self.r:
            raise ValueError("filter radius r must be positive")
        if self.alpha is not None and not self.r < self.R:
            raise ValueError(f"need r < R, got r={self.r}, R={self.R}")
        if self.p < 2:
            raise ValueError("aggregation exponent p must be >= 2")
        if self.beta0 < 1 or self.beta_max < self.beta0:
            raise ValueError("need 1 <= beta0 <= beta_max")
        if self.beta_period < 1:
            raise ValueError("beta_period must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def material(self) -> MaterialModel:
        return MaterialModel(self.E0, self.Emin, self.penal, self.nu)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationRecord:
    iteration: int
    compliance: float
    g: list
    sharpness: float
    beta: float
    delta: float
    fem_iterations: int
    seconds: float


@dataclass
class OptimizationTrace:
    constraint_names: list
    records: list = field(default_factory=list)

    def append(self, rec: IterationRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iteration index must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        if name in self.constraint_names:
            k = self.constraint_names.index(name)
            return np.array([r.g[k] for r in self.records])
        return np.array([getattr(r, name) for r in self.records])


def sharpness(rho, mask=None) -> float:
    """``4/n sum rho (1 - rho)``: 0 for a 0/1 field, 1 for an all-0.5 field."""
    rho = np.asarray(rho, dtype=float)
    if mask is not None:
        rho = rho[np.asarray(mask, bool)]
    return float(4.0 * np.mean(rho * (1.0 - rho)))


@dataclass
class Evaluation:
    compliance: float
    constraints: list  # (name, g)
    dc: np.ndarray  # over active elements
    dg: list
    phi_tilde: np.ndarray
    rho: np.ndarray
    rho_bar: list
    u: np.ndarray
    fem_iterations: int


class InfillModel:
    """Forward chain and sensitivities for one problem/configuration."""

    def __init__(self, problem: DesignProblem, config: OptimizationConfig):
        self.problem = problem
        self.config = config
        self.active = problem.active
        self.inside = problem.inside
        self.passive = problem.passive
        self.frozen = ~self.active
        self.n_active = int(self.active.sum())
        if self.n_active == 0:
            raise ValueError("problem has no active elements")
        self.filter = DensityFilter(smoothing_kernel(config.r), self.inside)
        self.locals: list[tuple[str, LocalVolume]] = []
        if config.alpha is not None:
            if config.anisotropic:
                rl = config.lobe_long if config.lobe_long is not None else config.R
                rs = config.lobe_short if config.lobe_short is not None else config.r
                self.locals = [("g_local", LocalVolume(lobe_kernel("x", rl, rs), self.active)),
                               ("g_local_y", LocalVolume(lobe_kernel("y", rl, rs), self.active))]
            else:
                self.locals = [("g_local", LocalVolume(counting_kernel(config.R), self.active))]
        self.constraint_names = [name for name, _ in self.locals]
        if config.alpha_total is not None:
            self.constraint_names.append("g_total")
        self.material = config.material
        self.fem = FemSystem(problem.grid, problem.bc, self.material, tol=config.solver_tol,
                             max_iter=config.solver_max_iter, preconditioner=config.preconditioner)

    def full_design(self, phi_active):
        phi = np.zeros(self.problem.grid.element_shape)
        phi[self.active] = phi_active
        phi[self.passive] = 1.0
        return phi

    def physical(self, phi_active, beta):
        """``(phi_tilde, rho)`` for a design restricted to active elements."""
        phi_tilde = self.filter.forward(self.full_design(phi_active))
        rho = project(phi_tilde, beta)
        rho[self.passive] = 1.0
        rho[~self.inside] = 0.0
        return phi_tilde, rho

    def evaluate(self, phi_active, beta) -> Evaluation:
        cfg = self.config
        phi_tilde, rho = self.physical(phi_active, beta)
        E = young_modulus(rho, self.material)
        self.fem.set_modulus(E)
        u = self.fem.solve()
        energy = element_energy(u, self.fem.k0)
        c = float(np.vdot(E, energy))
        d_rho_c = -young_modulus_derivative(rho, self.material) * energy
        dc = chain_backprop(phi_tilde, beta, self.filter, d_rho=d_rho_c, frozen=self.frozen)[self.active]
        cons, dgs, rho_bars = [], [], []
        for name, lv in self.locals:
            rb = lv.forward(rho)
            rho_bars.append(rb)
            g, dgv = eval_local(rb[self.active], cfg.alpha, cfg.p)
            d_rb = np.zeros_like(rho)
            d_rb[self.active] = dgv
            cons.append((name, g))
            dgs.append(chain_backprop(phi_tilde, beta, self.filter, d_rho_bar=d_rb, local=lv,
                                      frozen=self.frozen)[self.active])
        if cfg.alpha_total is not None:
            g1, d1 = eval_total(rho, cfg.alpha_total, self.inside)
            cons.append(("g_total", g1))
            dgs.append(chain_backprop(phi_tilde, beta, self.filter, d_rho=d1, frozen=self.frozen)[self.active])
        return Evaluation(c, cons, dc, dgs, phi_tilde, rho, rho_bars, u, self.fem.last_info.iterations)

    def compliance_of(self, rho) -> float:
        """Compliance of an arbitrary density field (one state solve)."""
        E = young_modulus(rho, self.material)
        self.fem.set_modulus(E)
        u = self.fem.solve()
        return float(np.vdot(E, element_energy(u, self.fem.k0)))


def sensitivities(model: InfillModel, phi_active, beta):
    """``(dc/dphi, [dg_k/dphi])`` over active elements at ``phi_active``."""
    ev = model.evaluate(phi_active, beta)
    return ev.dc, ev.dg


@dataclass
class OptimizationResult:
    rho: np.ndarray
    phi: np.ndarray
    phi_tilde: np.ndarray
    rho_bar: list
    trace: OptimizationTrace
    compliance: float
    beta: float
    iterations: int
    converged: bool
    u: np.ndarray
    problem: DesignProblem = None
    config: OptimizationConfig = None

    @property
    def volume(self) -> float:
        return float(self.rho[self.problem.inside].mean())


def run(problem: DesignProblem, config: OptimizationConfig, callback=None) -> OptimizationResult:
    """Optimise ``problem``. ``callback(i, phi_active, evaluation)`` is called
    after each iteration's evaluation (used for snapshots)."""
    if config.alpha is not None and config.r < config.R:
        wb = wall_bound(config.alpha, config.R, config.r)
        if not wb.suppresses_walls:
            log.info("alpha=%.3g >= wall fraction %.4f for R=%g, r=%g: closed walls can form",
                     config.alpha, wb.ratio, config.R, config.r)
    model = InfillModel(problem, config)
    start = config.alpha if config.alpha is not None else config.alpha_total
    phi = np.full(model.n_active, float(start))
    state = MmaState.create(model.n_active, move=config.move)
    trace = OptimizationTrace(list(model.constraint_names))
    beta = float(config.beta0)
    delta = 1.0
    i = 0
    scale = None
    t0 = time.perf_counter()
    while delta > config.eps and i <= config.max_iter:
        i += 1
        try:
            ev = model.evaluate(phi, beta)
        except SolverError as exc:
            raise OptimizationAborted(f"state solve failed at iteration {i}: {exc}", trace) from exc
        if not np.isfinite(ev.compliance):
            raise OptimizationAborted(f"non-finite compliance at iteration {i}", trace)
        if scale is None:
            scale = ev.compliance if ev.compliance > 0 else 1.0
        if callback is not None:
            callback(i, phi, ev)
        phi_new, state = mma_update(phi, ev.compliance / scale, ev.dc / scale,
                                    list(zip([g for _, g in ev.constraints], ev.dg)), state)
        delta = float(np.max(np.abs(phi_new - phi)))
        phi = phi_new
        trace.append(IterationRecord(i, ev.compliance, [g for _, g in ev.constraints],
                                     sharpness(ev.rho, model.active), beta, delta,
                                     ev.fem_iterations, time.perf_counter() - t0))
        log.debug("it %4d  c %.6g  g %s  beta %g  delta %.4f", i, ev.compliance,
                  [round(g, 5) for _, g in ev.constraints], beta, delta)
        # beta saturates at beta_max; from then on a small design change ends the run
        if (i % config.beta_period == 0 or delta < config.eps) and beta < config.beta_max:
            beta = min(2.0 * beta, config.beta_max)
            delta = 1.0
    phi_tilde, rho = model.physical(phi, beta)
    c_final = model.compliance_of(rho)
    rho_bar = [lv.forward(rho) for _, lv in model.locals]
    return OptimizationResult(rho, model.full_design(phi), phi_tilde, rho_bar, trace, c_final, beta, i,
                              delta <= config.eps, model.fem.u.copy(), problem, config)
