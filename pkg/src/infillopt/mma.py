"""Method of Moving Asymptotes.

Each update builds the separable convex approximation of objective and
constraints around the current moving asymptotes and solves it through its
dual. The dual has one multiplier per constraint (at most a handful here),
so it is maximised by a damped projected Newton iteration on the
multipliers; the primal point is recovered in closed form.

Artificial variables follow the usual setting ``a0 = 1, a_i = 0, c_i = 1000,
d_i = 1``: a constraint that cannot be met is relaxed by ``y_i >= 0`` at
a penalty instead of making the subproblem infeasible.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class MmaError(RuntimeError):
    pass


@dataclass
class Subproblem:
    """Convex separable approximation around ``x``; kept for inspection."""

    low: np.ndarray
    upp: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    P: np.ndarray  # (m, n)
    Q: np.ndarray
    b: np.ndarray  # (m,)
    c: np.ndarray
    d: np.ndarray

    def primal(self, lam):
        """Minimiser of the Lagrangian over the box for multipliers ``lam``."""
        ph = self.p0 + lam @ self.P
        qh = self.q0 + lam @ self.Q
        sp_, sq = np.sqrt(ph), np.sqrt(qh)
        den = sp_ + sq
        with np.errstate(invalid="ignore", divide="ignore"):
            x = np.where(den > 0, (self.low * sp_ + self.upp * sq) / np.where(den > 0, den, 1.0),
                         0.5 * (self.alpha + self.beta))
        return np.clip(x, self.alpha, self.beta), ph, qh

    def constraints(self, x):
        """Approximated constraint values ``g~_i(x)`` (before slack)."""
        return (self.P @ (1.0 / (self.upp - x)) + self.Q @ (1.0 / (x - self.low))) - self.b

    def slack(self, lam):
        return np.maximum(0.0, (lam - self.c) / self.d)

    def dual(self, lam):
        x, ph, qh = self.primal(lam)
        y = self.slack(lam)
        val = (np.sum(ph / (self.upp - x) + qh / (x - self.low)) - lam @ self.b
               + np.sum(self.c * y + 0.5 * self.d * y * y - lam * y))
        grad = self.constraints(x) - y
        return val, grad, x, ph, qh

    def dual_hessian(self, lam, x, ph, qh):
        ux, xl = self.upp - x, x - self.low
        inner = (x > self.alpha) & (x < self.beta)
        G = self.P[:, inner] / ux[inner] ** 2 - self.Q[:, inner] / xl[inner] ** 2
        D = 2 * ph[inner] / ux[inner] ** 3 + 2 * qh[inner] / xl[inner] ** 3
        H = -(G / D) @ G.T
        H -= np.diag((lam > self.c) / self.d)
        return H


@dataclass
class MmaState:
    xmin: np.ndarray
    xmax: np.ndarray
    move: float = 0.2
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    penalty: float = 1000.0
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    iteration: int = 0
    last_multipliers: np.ndarray | None = None
    last_slack: np.ndarray | None = None
    dual_iterations: int = 0
    subproblem: Subproblem | None = field(default=None, repr=False)

    @classmethod
    def create(cls, n: int, lower=0.0, upper=1.0, **kw) -> "MmaState":
        return cls(np.full(n, float(lower)), np.full(n, float(upper)), **kw)


def _asymptotes(x, state: MmaState):
    span = state.xmax - state.xmin
    k = state.iteration + 1
    if k <= 2 or state.low is None:
        low = x - state.asyinit * span
        upp = x + state.asyinit * span
    else:
        trend = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.where(trend > 0, state.asyincr, np.where(trend < 0, state.asydecr, 1.0))
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        low = np.clip(low, x - 10 * span, x - 0.01 * span)
        upp = np.clip(upp, x + 0.01 * span, x + 10 * span)
    return low, upp


def _approx_terms(grad, ux2, xl2, span):
    reg = 1e-5 * max(float(np.max(np.abs(grad), initial=0.0)), 1e-300) / span
    pos, neg = np.maximum(grad, 0.0), np.maximum(-grad, 0.0)
    return ux2 * (1.001 * pos + 0.001 * neg + reg), xl2 * (0.001 * pos + 1.001 * neg + reg)


def build_subproblem(x, df0, cons, state: MmaState) -> Subproblem:
    span = np.maximum(state.xmax - state.xmin, 1e-5)
    low, upp = _asymptotes(x, state)
    alpha = np.maximum.reduce([low + 0.1 * (x - low), x - state.move * span, state.xmin])
    beta = np.minimum.reduce([upp - 0.1 * (upp - x), x + state.move * span, state.xmax])
    ux1, xl1 = upp - x, x - low
    ux2, xl2 = ux1 * ux1, xl1 * xl1
    p0, q0 = _approx_terms(df0, ux2, xl2, span)
    m = len(cons)
    P = np.empty((m, x.size))
    Q = np.empty((m, x.size))
    gvals = np.empty(m)
    for i, (g, dg) in enumerate(cons):
        P[i], Q[i] = _approx_terms(dg, ux2, xl2, span)
        gvals[i] = g
    b = P @ (1.0 / ux1) + Q @ (1.0 / xl1) - gvals
    return Subproblem(low, upp, alpha, beta, p0, q0, P, Q, b,
                      np.full(m, state.penalty), np.ones(m))


def _dual_magnitude(sub, lam, x, ph, qh):
    """Size of the largest summands of the dual value, for rounding tests."""
    y = sub.slack(lam)
    return (np.sum(ph / (sub.upp - x) + qh / (x - sub.low)) + np.abs(lam @ sub.b)
            + np.sum(np.abs(sub.c * y) + 0.5 * sub.d * y * y + np.abs(lam * y)))


def solve_dual(sub: Subproblem, tol=1e-12, max_iter=200):
    """Maximise the concave dual over ``lam >= 0``. Returns ``(lam, x, iters)``."""
    m = sub.b.size
    lam = np.zeros(m)
    if m == 0:
        x, _, _ = sub.primal(lam)
        return lam, x, 0
    val, grad, x, ph, qh = sub.dual(lam)
    scale = 1.0 + np.abs(sub.b).max()
    for it in range(1, max_iter + 1):
        res = np.where(lam > 0, grad, np.maximum(grad, 0.0))
        if np.max(np.abs(res)) <= tol * scale:
            return lam, x, it - 1
        free = (lam > 0) | (grad > 0)
        H = sub.dual_hessian(lam, x, ph, qh)
        step = np.zeros(m)
        A = -H[np.ix_(free, free)]
        mu = 1e-12 * max(np.trace(A), 1e-300) + 1e-300
        try:
            step[free] = np.linalg.solve(A + mu * np.eye(A.shape[0]), grad[free])
        except np.linalg.LinAlgError:
            step[free] = grad[free]
        if not np.all(np.isfinite(step)) or np.dot(step, grad) <= 0:
            step = np.where(free, grad, 0.0)
        # flat dual pieces (all primal variables on their bounds) give no curvature
        cap = 10.0 * max(1.0, np.abs(lam).max())
        if np.abs(step).max() > cap:
            step *= cap / np.abs(step).max()
        t = 1.0
        rmax = np.max(np.abs(res))
        while True:
            trial = np.maximum(lam + t * step, 0.0)
            if np.array_equal(trial, lam):
                break
            tval, tgrad, tx, tph, tqh = sub.dual(trial)
            if tval >= val + 1e-4 * np.dot(grad, trial - lam):
                break
            # near the optimum the dual value stalls at rounding level; a halved
            # KKT residual is then the better acceptance test
            tres = np.where(trial > 0, tgrad, np.maximum(tgrad, 0.0))
            if abs(tval - val) <= 1e-12 * _dual_magnitude(sub, trial, tx, tph, tqh) \
                    and np.max(np.abs(tres)) <= 0.5 * rmax:
                break
            t *= 0.5
        if np.array_equal(trial, lam):
            break
        lam, val, grad, x, ph, qh = trial, tval, tgrad, tx, tph, tqh
    res = np.where(lam > 0, grad, np.maximum(grad, 0.0))
    if np.max(np.abs(res)) <= 1e-8 * scale:
        return lam, x, max_iter
    raise MmaError(f"MMA dual did not converge (KKT residual {np.max(np.abs(res)):.3e})")


def mma_update(x, f0, df0, constraints, state: MmaState):
    """One MMA step.

    ``constraints`` is a sequence of ``(g_i, dg_i/dx)`` with ``g_i <= 0``
    required. Returns ``(x_next, state_next)``; the input state is untouched.
    """
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    cons = [(float(g), np.asarray(dg, dtype=float)) for g, dg in constraints]
    if df0.shape != x.shape or any(dg.shape != x.shape for _, dg in cons):
        raise ValueError("gradient length does not match the design vector")
    if not np.all(np.isfinite(df0)) or not np.isfinite(f0) or any(
            not (np.isfinite(g) and np.all(np.isfinite(dg))) for g, dg in cons):
        raise ValueError("non-finite objective/constraint value or gradient")
    sub = build_subproblem(x, df0, cons, state)
    lam, xnew, iters = solve_dual(sub)
    new = replace(state, low=sub.low, upp=sub.upp, xold1=x.copy(),
                  xold2=x.copy() if state.xold1 is None else state.xold1,
                  iteration=state.iteration + 1, last_multipliers=lam,
                  last_slack=sub.slack(lam), dual_iterations=iters, subproblem=sub)
    return xnew, new
