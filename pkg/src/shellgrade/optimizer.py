"""MMA optimization loop: minimize weighted compliance under two volume constraints."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import Analysis, Model, analyze
from .fem import FEMError
from .geometry import GeometryError
from .mma import MMAState, mma_update
from .problems import ProblemConfig


class OptimizationError(RuntimeError):
    """Numerical failure inside the loop; carries the offending design."""

    def __init__(self, iteration: int, x: np.ndarray, names, reason: str):
        self.iteration = iteration
        self.x = np.array(x)
        self.names = tuple(names)
        super().__init__(f"iteration {iteration}: {reason}")

    def dump(self) -> str:
        lines = [str(self)]
        lines += [f"{n} = {v!r}" for n, v in zip(self.names, self.x)]
        return "\n".join(lines)


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    compliance: float
    volume_fraction: float
    infill_volume_fraction: float
    max_rel_change: float
    restored: bool = False


@dataclass
class RunResult:
    x: np.ndarray
    records: list
    analysis: Analysis
    model: Model
    converged: bool = False
    history_x: list = field(default_factory=list)

    @property
    def compliance(self) -> float:
        return self.analysis.compliance


def relative_change(x_new, x_old, lower, upper) -> float:
    floor = 1e-3 * (upper - lower)
    return float(np.max(np.abs(x_new - x_old) / (np.abs(x_old) + floor))) if len(x_new) else 0.0


def converged(history, threshold: float = 0.05, min_iters: int = 30, max_iters: int = 300) -> bool:
    if not history:
        raise ValueError("history is empty")
    last = history[-1]
    if last.iter >= max_iters:
        return True
    return last.iter >= min_iters and last.max_rel_change < threshold


def ramped_bounds(problem: ProblemConfig, start: tuple[float, float], iteration: int, ramp: int):
    """Volume bounds (as domain fractions) for ``iteration``.

    A start that violates a bound has that bound moved linearly from the
    initial value to its target over ``ramp`` iterations, so early steps are
    not spent on restoring feasibility alone.
    """
    c = problem.constraints
    s = 1.0 - iteration / ramp if ramp > 0 else 0.0
    s = min(max(s, 0.0), 1.0)
    v_bar = max(c.v_bar, c.v_bar + s * (start[0] - c.v_bar))
    v_lower = None
    if c.v_lower is not None:
        v_lower = min(c.v_lower, c.v_lower + s * (start[1] - c.v_lower))
    return v_bar, v_lower


def _constraints(an: Analysis, area: float, v_bar: float, v_lower: float | None):
    g = [an.volume / (v_bar * area) - 1.0]
    dg = [an.dV / (v_bar * area)]
    if v_lower is not None:
        g.append(1.0 - an.volume_in / (v_lower * area))
        dg.append(-an.dVin / (v_lower * area))
    return np.array(g), np.vstack(dg)


def run(problem: ProblemConfig, max_iters: int | None = None, x0=None, model: Model | None = None,
        callback=None, keep_designs: bool = False) -> RunResult:
    problem.validate()
    model = model or Model.from_problem(problem)
    layout = model.layout
    params = problem.mma
    max_iters = params.max_iters if max_iters is None else max_iters
    x = layout.initial() if x0 is None else np.array(x0, dtype=float)
    free = layout.free
    lo, hi = layout.lower[free], layout.upper[free]
    state = MMAState()
    records, designs = [], []
    change, restored, c0 = math.nan, False, None
    while True:
        it = len(records)
        try:
            an = analyze(model, x)
        except (FEMError, GeometryError) as exc:
            raise OptimizationError(it, x, layout.names, str(exc)) from exc
        grads = np.concatenate([an.dC, an.dV, an.dVin])
        if not (np.isfinite(an.compliance) and np.all(np.isfinite(grads))):
            raise OptimizationError(it, x, layout.names, "non-finite response or gradient")
        rec = IterationRecord(it, an.compliance, an.volume_fraction, an.infill_fraction, change, restored)
        records.append(rec)
        if keep_designs:
            designs.append(x.copy())
        if callback is not None:
            callback(rec, an)
        if converged(records, params.threshold, max(params.min_iters, params.ramp_iters), max_iters):
            break
        if c0 is None:
            c0 = an.compliance
            start = (an.volume_fraction, an.infill_fraction)
        g, dg = _constraints(an, problem.domain_area, *ramped_bounds(problem, start, it + 1, params.ramp_iters))
        x_free = mma_update(state, x[free], an.compliance / c0, an.dC[free] / c0, g, dg[:, free], lo, hi, params)
        x_new = x.copy()
        x_new[free] = np.clip(x_free, lo, hi)
        change = relative_change(x_new[free], x[free], lo, hi)
        restored = state.restored
        x = x_new
    done = records[-1].iter < max_iters or records[-1].max_rel_change < params.threshold
    return RunResult(x=x, records=records, analysis=an, model=model, converged=done, history_x=designs)
