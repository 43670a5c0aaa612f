"""Method of Moving Asymptotes with a dual solved by nested bisection.

The subproblem is the standard separable convex approximation with
artificial variables ``y_i`` (cost ``c*y + d*y**2/2``) that keep it
feasible.  Its dual is concave in the multipliers and, with one or two
constraints, is maximized by bisection on one multiplier nested inside
bisection on the other.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MMAParams:
    move: float = 0.01
    asy_init: float = 0.05
    asy_incr: float = 1.2
    asy_decr: float = 0.7
    asy_min: float = 1e-4
    asy_max: float = 10.0
    albefa: float = 0.1
    c: float = 1000.0
    d: float = 1.0
    raa0: float = 1e-5
    dual_tol: float = 1e-10
    max_iters: int = 300
    min_iters: int = 30
    threshold: float = 0.05
    ramp_iters: int = 40


@dataclass
class MMAState:
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    x_old1: np.ndarray | None = None
    x_old2: np.ndarray | None = None
    iteration: int = 0
    restored: bool = False
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


def update_asymptotes(state: MMAState, x, xmin, xmax, params: MMAParams):
    span = xmax - xmin
    if state.iteration < 2 or state.x_old2 is None:
        low = x - params.asy_init * span
        upp = x + params.asy_init * span
    else:
        trend = (x - state.x_old1) * (state.x_old1 - state.x_old2)
        factor = np.ones_like(x)
        factor[trend > 0] = params.asy_incr
        factor[trend < 0] = params.asy_decr
        low = x - factor * (state.x_old1 - state.low)
        upp = x + factor * (state.upp - state.x_old1)
        low = np.clip(low, x - params.asy_max * span, x - params.asy_min * span)
        upp = np.clip(upp, x + params.asy_min * span, x + params.asy_max * span)
    return low, upp


class _Subproblem:
    def __init__(self, x, low, upp, alpha, beta, df0, g, dg, xmin, xmax, params, objective_weight=1.0):
        span = np.maximum(xmax - xmin, 1e-12)
        ux2 = (upp - x) ** 2
        xl2 = (x - low) ** 2
        reg = params.raa0 / span
        df0 = objective_weight * df0
        self.p0 = (1.001 * np.maximum(df0, 0) + 0.001 * np.maximum(-df0, 0) + reg) * ux2
        self.q0 = (0.001 * np.maximum(df0, 0) + 1.001 * np.maximum(-df0, 0) + reg) * xl2
        self.P = (1.001 * np.maximum(dg, 0) + 0.001 * np.maximum(-dg, 0) + reg) * ux2
        self.Q = (0.001 * np.maximum(dg, 0) + 1.001 * np.maximum(-dg, 0) + reg) * xl2
        self.b = self.P @ (1 / (upp - x)) + self.Q @ (1 / (x - low)) - g
        self.low, self.upp, self.alpha, self.beta = low, upp, alpha, beta
        self.c, self.d = params.c, params.d

    def primal(self, lam):
        p = self.p0 + lam @ self.P
        q = self.q0 + lam @ self.Q
        sp, sq = np.sqrt(p), np.sqrt(q)
        x = (sp * self.low + sq * self.upp) / (sp + sq)
        return np.clip(x, self.alpha, self.beta)

    def artificial(self, lam):
        return np.maximum(0.0, (lam - self.c) / self.d)

    def dual_gradient(self, lam):
        x = self.primal(lam)
        g = self.P @ (1 / (self.upp - x)) + self.Q @ (1 / (x - self.low)) - self.b
        return g - self.artificial(lam)


def _maximize(grad_fn, tol):
    """Bisection for the root of a nonincreasing function on [0, inf)."""
    if grad_fn(0.0) <= 0:
        return 0.0
    hi = 1.0
    while grad_fn(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            return hi
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if grad_fn(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_dual(sub: _Subproblem, m: int, tol: float) -> np.ndarray:
    """Maximize the concave dual over lam >= 0 by nested bisection (m <= 2)."""
    if m == 0:
        return np.zeros(0)
    if m == 1:
        return np.array([_maximize(lambda t: sub.dual_gradient(np.array([t]))[0], tol)])
    if m == 2:
        def inner(l2):
            return _maximize(lambda t: sub.dual_gradient(np.array([t, l2]))[0], tol)

        # envelope theorem: derivative of max_l1 W(l1, l2) is dW/dl2 at the inner optimum
        l2 = _maximize(lambda t: sub.dual_gradient(np.array([inner(t), t]))[1], tol)
        return np.array([inner(l2), l2])
    raise NotImplementedError("nested bisection is implemented for at most two constraints")


def mma_update(state: MMAState, x, f0, df0, g, dg, xmin, xmax, params: MMAParams = MMAParams()):
    """One MMA step; returns the new iterate and mutates ``state``.

    ``f0`` is accepted for symmetry with the gradient but the separable
    approximation only needs ``df0``.  ``g`` holds constraint values in the form g_i(x) <= 0 and ``dg`` their
    gradients as rows.
    """
    x = np.asarray(x, dtype=float)
    xmin = np.asarray(xmin, dtype=float)
    xmax = np.asarray(xmax, dtype=float)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    dg = np.asarray(dg, dtype=float).reshape(len(g), len(x))
    m = len(g)
    span = xmax - xmin
    low, upp = update_asymptotes(state, x, xmin, xmax, params)
    alpha = np.maximum.reduce([low + params.albefa * (x - low), x - params.move * span, xmin])
    beta = np.minimum.reduce([upp - params.albefa * (upp - x), x + params.move * span, xmax])
    sub = _Subproblem(x, low, upp, alpha, beta, np.asarray(df0, dtype=float), g, dg, xmin, xmax, params)
    lam = solve_dual(sub, m, params.dual_tol)
    restored = bool(m and np.any(sub.artificial(lam) > 1e-9))
    if restored:
        # subproblem cannot satisfy the linearized constraints: step on constraints only
        sub = _Subproblem(x, low, upp, alpha, beta, np.asarray(df0, dtype=float), g, dg, xmin, xmax, params, 1e-6)
        lam = solve_dual(sub, m, params.dual_tol)
    x_new = sub.primal(lam)
    state.x_old2 = None if state.x_old1 is None else state.x_old1.copy()
    state.x_old1 = x.copy()
    state.low, state.upp = low, upp
    state.iteration += 1
    state.restored = restored
    state.multipliers = lam
    return x_new
