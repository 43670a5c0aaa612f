"""Forward pipeline: design vector -> TDFs -> densities -> FEM -> responses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignLayout
from .fem import BoundaryConditions, SolveResult, assemble_and_solve, q4_unit_stiffness
from .field import Grid, HeavisideParams, volume_measure
from .geometry import AggregationParams, LatticeSpec, ShellSpec
from .problems import ProblemConfig
from .sensitivity import ChainContext, build_context, compliance_gradient, volume_gradients


@dataclass
class Model:
    """Everything about a problem that does not change with the design."""

    problem: ProblemConfig
    grid: Grid
    points: np.ndarray
    layout: DesignLayout
    hp: HeavisideParams
    agg: AggregationParams
    k_s: np.ndarray
    bc: BoundaryConditions
    loads: tuple

    @classmethod
    def from_problem(cls, problem: ProblemConfig, grid: Grid | None = None) -> "Model":
        grid = grid or problem.grid
        return cls(
            problem=problem,
            grid=grid,
            points=grid.node_coords(),
            layout=DesignLayout(problem),
            hp=problem.heaviside_params(grid),
            agg=problem.ks,
            k_s=q4_unit_stiffness(problem.material, grid.dx, grid.dy),
            bc=problem.boundary_conditions(grid),
            loads=problem.load_cases(grid),
        )

    @property
    def domain_area(self) -> float:
        return self.problem.domain_area

    @property
    def n_samples(self) -> int:
        return self.problem.shell.n_samples_per_control * max(v.control_count for v in self.problem.shell.voids)


@dataclass
class Analysis:
    x: np.ndarray
    lattice: LatticeSpec
    shell: ShellSpec
    ctx: ChainContext
    solve: SolveResult
    compliance: float
    volume: float
    volume_in: float
    domain_area: float
    dC: np.ndarray | None = None
    dV: np.ndarray | None = None
    dVin: np.ndarray | None = None

    @property
    def densities(self) -> np.ndarray:
        return self.ctx.densities

    @property
    def volume_fraction(self) -> float:
        return self.volume / self.domain_area

    @property
    def infill_fraction(self) -> float:
        return self.volume_in / self.domain_area


def analyze(model: Model, x, gradients: bool = True, precision=np.float64) -> Analysis:
    """Forward analysis; ``precision`` sets the floating type of the geometry and field stages.

    Extended precision is meant for finite-difference oracles; the
    factorization itself always runs in double precision.
    """
    x = np.asarray(x, dtype=float)
    ctx = build_context(
        model.points.astype(precision), x, model.layout, model.agg, model.hp, model.grid, jacobian=gradients, n_samples=model.n_samples
    )
    solve = assemble_and_solve(ctx.densities, model.k_s, model.grid, model.bc, model.loads)
    lattice, shell = model.layout.unpack(x)
    out = Analysis(
        x=x,
        lattice=lattice,
        shell=shell,
        ctx=ctx,
        solve=solve,
        compliance=solve.aggregate,
        volume=volume_measure(ctx.phi_s, model.grid, model.hp),
        volume_in=volume_measure(ctx.phi0_ext, model.grid, model.hp),
        domain_area=model.domain_area,
    )
    if gradients:
        out.dC = compliance_gradient(ctx, solve, model.hp)
        out.dV, out.dVin = volume_gradients(ctx, model.hp)
    return out
