"""Problem configuration and the benchmark constructors.

Domains (paper scale / desk scale), all with square lattice cells:

* short beam: 20 x 12 / 5 x 3, clamped left edge, unit tip load at mid-height
  of the right edge,
* MBB beam: 16 x 4 / 4 x 1, pin and roller at the bottom corners, unit load
  at the middle of the top edge,
* multi-load beam: 2 x 1 at both scales, pin and roller at the bottom
  corners, three unit loads at 1/4, 1/2 and 3/4 of the top edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fem import BoundaryConditions, LoadCase, MaterialParams
from .field import Grid, HeavisideParams
from .geometry import AggregationParams, ComponentParams, VoidCurve, build_radius_table, void_eval
from .mma import MMAParams


class ConfigError(ValueError):
    """Invalid problem configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}{where}: {message}")


EDGES = ("left", "right", "bottom", "top")
DIRS = {"x": (0,), "y": (1,), "xy": (0, 1)}


@dataclass(frozen=True)
class LoadSpec:
    """Point loads as (x, y, direction, magnitude), snapped to the nearest node."""

    points: tuple
    weight: float = 1.0


@dataclass(frozen=True)
class SupportSpec:
    kind: str  # "edge" or "point"
    where: object  # edge name or (x, y)
    dirs: str = "xy"


@dataclass(frozen=True)
class LatticeConfig:
    cells: tuple[int, int]
    components: tuple  # initial ComponentParams of the prototype cell
    n1: int = 4
    n2: int = 4
    shared_cpf: bool = True
    movable_centers: bool = False
    center_range: tuple[float, float] = (0.49, 0.51)
    freeze_cpf: bool = False
    alpha: np.ndarray | None = None  # initial CPF coefficients, (ncpf, n1, 2)
    beta: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, LatticeConfig):
            return NotImplemented
        return _fields_equal(self, other)


@dataclass(frozen=True)
class ShellConfig:
    voids: tuple  # initial VoidCurve list
    delta_d: float
    n_samples_per_control: int = 64

    def __eq__(self, other):
        if not isinstance(other, ShellConfig):
            return NotImplemented
        if self.delta_d != other.delta_d or self.n_samples_per_control != other.n_samples_per_control:
            return False
        if len(self.voids) != len(other.voids):
            return False
        return all(_curves_equal(a, b) for a, b in zip(self.voids, other.voids))


@dataclass(frozen=True)
class ConstraintConfig:
    v_bar: float = 0.3  # fraction of the domain area
    v_lower: float | None = 0.5  # None disables the infill-region constraint


@dataclass(frozen=True)
class HeavisideConfig:
    epsilon_factor: float = 3.0
    alpha: float = 1e-3
    penal: float = 2.0


@dataclass(frozen=True)
class OutputConfig:
    history: bool = True
    raster: bool = True
    boundaries: bool = True
    control_points: bool = True
    seed: int = 0


@dataclass(frozen=True)
class ProblemConfig:
    name: str
    domain: tuple[float, float]
    mesh: tuple[int, int]
    material: MaterialParams
    loads: tuple
    supports: tuple
    lattice: LatticeConfig
    shell: ShellConfig
    constraints: ConstraintConfig = ConstraintConfig()
    heaviside: HeavisideConfig = HeavisideConfig()
    ks: AggregationParams = AggregationParams()
    mma: MMAParams = MMAParams()
    output: OutputConfig = OutputConfig()

    @property
    def grid(self) -> Grid:
        return Grid.over(self.domain[0], self.domain[1], *self.mesh)

    @property
    def domain_area(self) -> float:
        return self.domain[0] * self.domain[1]

    def heaviside_params(self, grid: Grid | None = None) -> HeavisideParams:
        g = grid or self.grid
        h = self.heaviside
        return HeavisideParams.for_grid(g, h.epsilon_factor, h.alpha, h.penal)

    def load_cases(self, grid: Grid | None = None) -> tuple:
        g = grid or self.grid
        cases = []
        for spec in self.loads:
            pts = tuple((g.nearest_node(x, y), DIRS[d][0], float(mag)) for x, y, d, mag in spec.points)
            cases.append(LoadCase(pts, spec.weight))
        return tuple(cases)

    def boundary_conditions(self, grid: Grid | None = None) -> BoundaryConditions:
        g = grid or self.grid
        nxn, nyn = g.nx_elems + 1, g.ny_elems + 1
        fixed = []
        for s in self.supports:
            if s.kind == "edge":
                ids = {
                    "left": np.arange(nyn) * nxn,
                    "right": np.arange(nyn) * nxn + nxn - 1,
                    "bottom": np.arange(nxn),
                    "top": (nyn - 1) * nxn + np.arange(nxn),
                }[s.where]
            else:
                ids = [g.nearest_node(*s.where)]
            fixed += [(int(n), d) for n in ids for d in DIRS[s.dirs]]
        return BoundaryConditions(tuple(fixed))

    def validate(self) -> "ProblemConfig":
        L, H = self.domain
        if not (L > 0 and H > 0):
            raise ConfigError("domain.length", "domain dimensions must be positive")
        if min(self.mesh) < 1:
            raise ConfigError("grid.nx", "need at least one element per direction")
        c = self.constraints
        if not 0 < c.v_bar < 1:
            raise ConfigError("constraints.v_bar", f"must lie in (0, 1) as a fraction of V_D, got {c.v_bar}")
        if c.v_lower is not None and not 0 < c.v_lower < 1:
            raise ConfigError("constraints.v_lower", f"must lie in (0, 1) as a fraction of V_D, got {c.v_lower}")
        if not self.loads:
            raise ConfigError("loads", "at least one load case is required")
        total = sum(s.weight for s in self.loads)
        if not np.isclose(total, 1.0):
            raise ConfigError("loads.case1.weight", f"load case weights must sum to 1, got {total}")
        for i, spec in enumerate(self.loads):
            for x, y, d, _ in spec.points:
                if not (0 <= x <= L and 0 <= y <= H):
                    raise ConfigError(f"loads.case{i + 1}.points", f"load point ({x}, {y}) lies outside the domain")
                if d not in ("x", "y"):
                    raise ConfigError(f"loads.case{i + 1}.points", f"direction must be x or y, got {d!r}")
        for i, s in enumerate(self.supports):
            if s.kind == "edge" and s.where not in EDGES:
                raise ConfigError(f"bcs.fix{i + 1}", f"unknown edge {s.where!r}")
            if s.kind == "point" and not (0 <= s.where[0] <= L and 0 <= s.where[1] <= H):
                raise ConfigError(f"bcs.fix{i + 1}", "support point lies outside the domain")
            if s.dirs not in DIRS:
                raise ConfigError(f"bcs.fix{i + 1}", f"directions must be x, y or xy, got {s.dirs!r}")
        n_constraints = len(self.boundary_conditions().fixed_dofs)
        if n_constraints < 3:
            raise ConfigError("bcs", "at least three constrained dofs are needed to remove rigid modes")
        if min(self.lattice.cells) < 1 or not self.lattice.components:
            raise ConfigError("lattice.nx", "lattice needs cells and at least one component")
        if not self.shell.delta_d > 0:
            raise ConfigError("shell.delta_d", "must be positive")
        for j, v in enumerate(self.shell.voids):
            if np.any(v.radii <= 0):
                raise ConfigError(f"shell.void{j + 1}.radii", "control radii must be positive")
            if v.inverted and np.any(v.radii - self.shell.delta_d <= 0):
                raise ConfigError(f"shell.void{j + 1}.radii", "outer boundary thinner than the shell")
        return self


def _curves_equal(a: VoidCurve, b: VoidCurve) -> bool:
    return (
        tuple(a.center) == tuple(b.center)
        and np.array_equal(a.radii, b.radii)
        and a.spline_order == b.spline_order
        and a.inverted == b.inverted
    )


def _fields_equal(a, b) -> bool:
    for name in a.__dataclass_fields__:
        u, v = getattr(a, name), getattr(b, name)
        if isinstance(u, np.ndarray) or isinstance(v, np.ndarray):
            if u is None or v is None or not np.array_equal(u, v):
                return False
        elif u != v:
            return False
    return True


# ---------------------------------------------------------------------------
# initial designs
# ---------------------------------------------------------------------------


def x_cell_components(pitch: float, four: bool = False, thickness: float = 0.17) -> tuple:
    """Prototype cell: an X at +-45 deg, optionally plus a horizontal and a vertical bar.

    ``thickness`` is the initial half-width as a fraction of the pitch.
    """
    center = (0.5 * pitch, 0.5 * pitch)
    diag = np.sqrt(2.0) * pitch
    t = thickness * pitch
    comps = [
        ComponentParams(center, 0.6 * diag, np.pi / 4, (t, t)),
        ComponentParams(center, 0.6 * diag, -np.pi / 4, (t, t)),
    ]
    if four:
        comps += [
            ComponentParams(center, 0.6 * pitch, 0.0, (t, t)),
            ComponentParams(center, 0.6 * pitch, np.pi / 2, (t, t)),
        ]
    return tuple(comps)


def grid_voids(L: float, H: float, count: int, n: int = 12) -> tuple:
    """Circular voids on a uniform grid, radius 0.6 x the grid half-pitch."""
    layouts = {8: (4, 2), 9: (3, 3), 12: (6, 2), 18: (6, 3)}
    if count not in layouts:
        raise ValueError(f"no void layout for {count} voids")
    cx, cy = layouts[count]
    px, py = L / cx, H / cy
    radius = 0.6 * 0.5 * min(px, py)
    voids = []
    for j in range(cy):
        for i in range(cx):
            voids.append(VoidCurve(((i + 0.5) * px, (j + 0.5) * py), np.full(n, radius)))
    return tuple(voids)


def _rectangle_points(L, H, per_edge=60):
    s = np.linspace(0, 1, per_edge, endpoint=False)
    return np.vstack(
        [
            np.column_stack([s * L, np.zeros_like(s)]),
            np.column_stack([np.full_like(s, L), s * H]),
            np.column_stack([L - s * L, np.full_like(s, H)]),
            np.column_stack([np.zeros_like(s), H - s * H]),
        ]
    )


def outer_boundary(L: float, H: float, offset: float, n: int = 12, iterations: int = 8,
                   corner_margin: float = 0.0) -> VoidCurve:
    """Inverted curve fitted by Gauss-Newton to the domain rectangle grown by ``offset``.

    Radial least squares on the realized (tabulated) curve, using the same
    partials the optimizer uses.  A negative offset leaves a gap between the
    structure and the domain edges.  A positive ``corner_margin`` adds heavily
    weighted targets that push the curve past the rectangle corners, so that
    point supports placed there start inside solid material.
    """
    center = np.array([0.5 * L, 0.5 * H])
    a, b = 0.5 * L + offset, 0.5 * H + offset
    targets = center + _rectangle_points(2 * a, 2 * b) - np.array([a, b])
    weights = np.ones(len(targets))
    if corner_margin > 0:
        corners = np.array([[0.0, 0.0], [L, 0.0], [L, H], [0.0, H]]) - center
        reach = np.hypot(*corners.T) + corner_margin
        corners = center + corners / np.hypot(*corners.T)[:, None] * reach[:, None]
        targets = np.vstack([targets, corners])
        weights = np.concatenate([weights, np.full(4, 4.0 * len(weights))])
    psi = 2 * np.pi * np.arange(n) / n
    radii = np.minimum(a / np.maximum(np.abs(np.cos(psi)), 1e-12), b / np.maximum(np.abs(np.sin(psi)), 1e-12))
    w = np.sqrt(weights)[:, None]
    for _ in range(iterations):
        curve = VoidCurve(tuple(center), radii)
        ev = void_eval(targets, curve, build_radius_table(curve))
        # phi = rho - r(psi); drive phi to zero at the targets
        step, *_ = np.linalg.lstsq(w * ev.dphi_dradii, -w[:, 0] * ev.phi, rcond=None)
        radii = np.maximum(radii + step, 0.05 * min(a, b))
    return VoidCurve(tuple(center), radii, inverted=True)


def _make(name, domain, mesh, cells, comps, voids, delta_d, supports, loads, v_lower, *, infill=True,
          freeze_cpf=False, movable=False, n1=4, n2=4):
    lattice = LatticeConfig(
        cells=cells,
        components=comps,
        n1=n1,
        n2=n2,
        movable_centers=movable,
        freeze_cpf=freeze_cpf,
    )
    return ProblemConfig(
        name=name,
        domain=domain,
        mesh=mesh,
        material=MaterialParams(1.0, 0.3),
        loads=loads,
        supports=supports,
        lattice=lattice,
        shell=ShellConfig(voids, delta_d),
        constraints=ConstraintConfig(0.3, v_lower if infill else None),
    ).validate()


def short_beam(scale: str = "desk", v_lower: float = 0.5, infill_constraint: bool = True,
               freeze_cpf: bool = False) -> ProblemConfig:
    if scale == "paper":
        L, H, mesh, cells, gap = 20.0, 12.0, (500, 300), (40, 24), True
    elif scale == "desk":
        L, H, mesh, cells, gap = 5.0, 3.0, (120, 72), (10, 6), False
    else:
        raise ValueError(f"unknown scale {scale!r}")
    delta_d = 0.08
    pitch = L / cells[0]
    # at paper scale the initial structure sits clear of the clamped edge
    offset = -0.02 * L if gap else 0.5 * delta_d
    voids = grid_voids(L, H, 8) + (outer_boundary(L, H, offset),)
    return _make(
        "short_beam",
        (L, H),
        mesh,
        cells,
        x_cell_components(pitch),
        voids,
        delta_d,
        (SupportSpec("edge", "left", "xy"),),
        (LoadSpec(((L, 0.5 * H, "y", -1.0),)),),
        v_lower,
        infill=infill_constraint,
        freeze_cpf=freeze_cpf,
    )


def mbb_beam(scale: str = "desk", v_lower: float = 0.5, infill_constraint: bool = True,
             freeze_cpf: bool = False) -> ProblemConfig:
    if scale == "paper":
        L, H, mesh, cells = 16.0, 4.0, (960, 240), (64, 16)
    elif scale == "desk":
        L, H, mesh, cells = 4.0, 1.0, (240, 60), (16, 4)
    else:
        raise ValueError(f"unknown scale {scale!r}")
    delta_d = 0.06
    pitch = L / cells[0]
    voids = grid_voids(L, H, 12) + (outer_boundary(L, H, 0.5 * delta_d, corner_margin=delta_d),)
    return _make(
        "mbb_beam",
        (L, H),
        mesh,
        cells,
        x_cell_components(pitch),
        voids,
        delta_d,
        (SupportSpec("point", (0.0, 0.0), "xy"), SupportSpec("point", (L, 0.0), "y")),
        (LoadSpec(((0.5 * L, H, "y", -1.0),)),),
        v_lower,
        infill=infill_constraint,
        freeze_cpf=freeze_cpf,
    )


def multi_load(scale: str = "desk", voids: int = 18, cells: str = "two_comp", mode: str = "averaged",
               v_lower: float = 0.5) -> ProblemConfig:
    L, H = 2.0, 1.0
    if scale == "paper":
        mesh, lattice_cells = (600, 300), (20, 10)
    elif scale == "desk":
        mesh, lattice_cells = (200, 100), (10, 5)
    else:
        raise ValueError(f"unknown scale {scale!r}")
    if cells not in ("two_comp", "four_comp"):
        raise ValueError(f"unknown cell type {cells!r}")
    if mode not in ("simultaneous", "averaged"):
        raise ValueError(f"unknown load mode {mode!r}")
    four = cells == "four_comp"
    delta_d = 0.05 if four else 0.06
    pitch = L / lattice_cells[0]
    loads = [(f * L, H, "y", -1.0) for f in (0.25, 0.5, 0.75)]
    if mode == "simultaneous":
        load_specs = (LoadSpec(tuple(loads)),)
    else:
        load_specs = tuple(LoadSpec((p,), 1.0 / 3.0) for p in loads)
    curves = grid_voids(L, H, voids) + (outer_boundary(L, H, 0.5 * delta_d, corner_margin=delta_d),)
    cfg = _make(
        f"multi_load_{cells}_{mode}",
        (L, H),
        mesh,
        lattice_cells,
        x_cell_components(pitch, four, thickness=0.08),
        curves,
        delta_d,
        (SupportSpec("point", (0.0, 0.0), "xy"), SupportSpec("point", (L, 0.0), "y")),
        load_specs,
        v_lower,
        movable=four,
    )
    return cfg


BENCHMARKS = {"short_beam": short_beam, "mbb_beam": mbb_beam, "multi_load": multi_load}


def with_grid(problem: ProblemConfig, mesh: tuple[int, int]) -> ProblemConfig:
    return replace(problem, mesh=tuple(mesh))
