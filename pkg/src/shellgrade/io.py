"""Configuration files and run outputs.

Config files are sectioned ``key = value`` text::

    [domain]
    name = short_beam
    length = 5.0
    height = 3.0

Lists are whitespace separated; several entries of one kind are numbered
(``case1.points``, ``fix2``, ``component1``, ``void3.radii``).
"""
from __future__ import annotations

import csv
import re
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .fem import MaterialParams
from .field import Grid
from .geometry import AggregationParams, ComponentParams, ShellSpec, VoidCurve
from .mma import MMAParams
from .optimizer import IterationRecord
from .problems import (
    ConfigError,
    ConstraintConfig,
    HeavisideConfig,
    LatticeConfig,
    LoadSpec,
    OutputConfig,
    ProblemConfig,
    ShellConfig,
    SupportSpec,
)

SECTIONS = ("domain", "grid", "material", "loads", "bcs", "lattice", "shell", "constraints", "heaviside", "ks", "mma",
            "output")
REQUIRED = ("domain", "grid", "loads", "bcs", "lattice", "shell")

# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


class _Entries:
    """Parsed key/value pairs that remember their line and whether they were used."""

    def __init__(self, path):
        self.values: dict[str, tuple[str, int]] = {}
        self.used: set[str] = set()
        self.sections: set[str] = set()
        section = None
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"\[(\w+)\]", line)
            if m:
                section = m.group(1)
                if section not in SECTIONS:
                    raise ConfigError(section, "unknown section", lineno)
                if section in self.sections:
                    raise ConfigError(section, "duplicate section", lineno)
                self.sections.add(section)
                continue
            if section is None:
                raise ConfigError(line, "entry outside of any section", lineno)
            if "=" not in line:
                raise ConfigError(f"{section}", f"expected 'key = value', got {line!r}", lineno)
            key, value = (part.strip() for part in line.split("=", 1))
            full = f"{section}.{key}"
            if full in self.values:
                raise ConfigError(full, "duplicate key", lineno)
            self.values[full] = (value, lineno)
        for sec in REQUIRED:
            if sec not in self.sections:
                raise ConfigError(sec, "missing required section")

    def line(self, key):
        return self.values.get(key, (None, None))[1]

    def has(self, key) -> bool:
        return key in self.values

    def raw(self, key, default=None, required=True):
        if key not in self.values:
            if required and default is None:
                raise ConfigError(key, "missing required key")
            return default
        self.used.add(key)
        return self.values[key][0]

    def _convert(self, key, conv, what, default, required):
        text = self.raw(key, None if required else default, required)
        if text is None or (not required and key not in self.values):
            return default
        try:
            return conv(text)
        except ValueError:
            raise ConfigError(key, f"expected {what}, got {text!r}", self.line(key)) from None

    def float(self, key, default=None, required=False):
        return self._convert(key, float, "a number", default, required)

    def int(self, key, default=None, required=False):
        return self._convert(key, int, "an integer", default, required)

    def bool(self, key, default=None, required=False):
        def conv(t):
            low = t.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(t)

        return self._convert(key, conv, "true or false", default, required)

    def floats(self, key, count=None, default=None, required=False):
        def conv(t):
            vals = [float(v) for v in t.split()]
            if count is not None and len(vals) != count:
                raise ValueError(t)
            return vals

        what = f"{count} numbers" if count else "a list of numbers"
        return self._convert(key, conv, what, default, required)

    def numbered(self, prefix, suffix=""):
        """Indices n for which ``prefix{n}{suffix}`` exists, sorted."""
        pat = re.compile(re.escape(prefix) + r"(\d+)" + re.escape(suffix) + "$")
        return sorted({int(m.group(1)) for k in self.values if (m := pat.match(k))})

    def check_unused(self):
        for key, (_, lineno) in self.values.items():
            if key not in self.used:
                raise ConfigError(key, "unknown key", lineno)


def _dataclass_from(entries: _Entries, section: str, cls, skip=()):
    kwargs = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        key = f"{section}.{f.name}"
        if not entries.has(key):
            continue
        if f.type in ("int", int):
            kwargs[f.name] = entries.int(key)
        elif f.type in ("bool", bool):
            kwargs[f.name] = entries.bool(key)
        else:
            kwargs[f.name] = entries.float(key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from None


def parse_config(path) -> ProblemConfig:
    """Read a config file; errors name the offending key and line."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("file", f"config file {str(path)!r} does not exist")
    e = _Entries(path)
    name = e.raw("domain.name", "problem", required=False)
    L = e.float("domain.length", required=True)
    H = e.float("domain.height", required=True)
    mesh = (e.int("grid.nx", required=True), e.int("grid.ny", required=True))
    material = _dataclass_from(e, "material", MaterialParams)

    loads = []
    for i in e.numbered("loads.case", ".points"):
        key = f"loads.case{i}.points"
        pts = []
        for chunk in e.raw(key).split(";"):
            parts = chunk.split()
            if len(parts) != 4:
                raise ConfigError(key, f"expected 'x y direction magnitude', got {chunk.strip()!r}", e.line(key))
            try:
                pts.append((float(parts[0]), float(parts[1]), parts[2], float(parts[3])))
            except ValueError:
                raise ConfigError(key, f"bad load entry {chunk.strip()!r}", e.line(key)) from None
        loads.append(LoadSpec(tuple(pts), e.float(f"loads.case{i}.weight", 1.0)))
    if not loads:
        raise ConfigError("loads", "at least one 'caseN.points' entry is required")

    supports = []
    for i in e.numbered("bcs.fix"):
        key = f"bcs.fix{i}"
        parts = e.raw(key).split()
        try:
            if parts[0] == "edge" and len(parts) == 3:
                supports.append(SupportSpec("edge", parts[1], parts[2]))
            elif parts[0] == "point" and len(parts) == 4:
                supports.append(SupportSpec("point", (float(parts[1]), float(parts[2])), parts[3]))
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise ConfigError(key, "expected 'edge <name> <dirs>' or 'point <x> <y> <dirs>'", e.line(key)) from None
    if not supports:
        raise ConfigError("bcs", "at least one 'fixN' entry is required")

    comps = []
    for i in e.numbered("lattice.component"):
        key = f"lattice.component{i}"
        v = e.floats(key, 7)
        try:
            comps.append(ComponentParams((v[0], v[1]), v[2], v[3], (v[4], v[5]), int(v[6])))
        except ValueError as exc:
            raise ConfigError(key, str(exc), e.line(key)) from None
    cells = (e.int("lattice.nx", required=True), e.int("lattice.ny", required=True))
    n1, n2 = e.int("lattice.n1", 4), e.int("lattice.n2", 4)
    shared = e.bool("lattice.shared_cpf", True)
    blocks = 1 if shared else max(1, len(comps))
    alpha = e.floats("lattice.alpha", blocks * n1 * 2)
    beta = e.floats("lattice.beta", blocks * n2 * 2)
    lattice = LatticeConfig(
        cells=cells,
        components=tuple(comps),
        n1=n1,
        n2=n2,
        shared_cpf=shared,
        movable_centers=e.bool("lattice.movable_centers", False),
        center_range=tuple(e.floats("lattice.center_range", 2, [0.49, 0.51])),
        freeze_cpf=e.bool("lattice.freeze_cpf", False),
        alpha=None if alpha is None else np.array(alpha).reshape(blocks, n1, 2),
        beta=None if beta is None else np.array(beta).reshape(blocks, n2, 2),
    )

    voids = []
    for i in e.numbered("shell.void", ".center"):
        pre = f"shell.void{i}"
        center = e.floats(f"{pre}.center", 2, required=True)
        radii = e.floats(f"{pre}.radii", required=True)
        try:
            voids.append(
                VoidCurve(
                    (center[0], center[1]),
                    np.array(radii),
                    e.int(f"{pre}.order", 2),
                    e.bool(f"{pre}.inverted", False),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{pre}.radii", str(exc), e.line(f"{pre}.radii")) from None
    shell = ShellConfig(tuple(voids), e.float("shell.delta_d", required=True), e.int("shell.samples_per_control", 64))
    if not voids:
        raise ConfigError("shell", "at least one 'voidN.center' entry is required")

    v_lower_text = e.raw("constraints.v_lower", "0.5", required=False)
    if v_lower_text.lower() == "none":
        v_lower = None
    else:
        v_lower = e.float("constraints.v_lower", 0.5)
    constraints = ConstraintConfig(e.float("constraints.v_bar", 0.3), v_lower)
    heaviside = _dataclass_from(e, "heaviside", HeavisideConfig)
    ks = _dataclass_from(e, "ks", AggregationParams)
    mma = _dataclass_from(e, "mma", MMAParams)
    output = _dataclass_from(e, "output", OutputConfig)
    e.check_unused()
    cfg = ProblemConfig(
        name=name,
        domain=(L, H),
        mesh=mesh,
        material=material,
        loads=tuple(loads),
        supports=tuple(supports),
        lattice=lattice,
        shell=shell,
        constraints=constraints,
        heaviside=heaviside,
        ks=ks,
        mma=mma,
        output=output,
    )
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(exc.key, str(exc).split(": ", 1)[-1], e.line(exc.key)) from None


def _num(v) -> str:
    return repr(float(v))


def _nums(vs) -> str:
    return " ".join(_num(v) for v in np.ravel(vs))


def serialize_config(cfg: ProblemConfig) -> str:
    out = ["[domain]", f"name = {cfg.name}", f"length = {_num(cfg.domain[0])}", f"height = {_num(cfg.domain[1])}", ""]
    out += ["[grid]", f"nx = {cfg.mesh[0]}", f"ny = {cfg.mesh[1]}", ""]
    m = cfg.material
    out += ["[material]", f"youngs = {_num(m.youngs)}", f"poisson = {_num(m.poisson)}",
            f"thickness = {_num(m.thickness)}", ""]
    out.append("[loads]")
    for i, spec in enumerate(cfg.loads, start=1):
        pts = "; ".join(f"{_num(x)} {_num(y)} {d} {_num(mag)}" for x, y, d, mag in spec.points)
        out += [f"case{i}.points = {pts}", f"case{i}.weight = {_num(spec.weight)}"]
    out += ["", "[bcs]"]
    for i, s in enumerate(cfg.supports, start=1):
        if s.kind == "edge":
            out.append(f"fix{i} = edge {s.where} {s.dirs}")
        else:
            out.append(f"fix{i} = point {_num(s.where[0])} {_num(s.where[1])} {s.dirs}")
    lat = cfg.lattice
    out += ["", "[lattice]", f"nx = {lat.cells[0]}", f"ny = {lat.cells[1]}", f"n1 = {lat.n1}", f"n2 = {lat.n2}",
            f"shared_cpf = {str(lat.shared_cpf).lower()}", f"movable_centers = {str(lat.movable_centers).lower()}",
            f"center_range = {_nums(lat.center_range)}", f"freeze_cpf = {str(lat.freeze_cpf).lower()}"]
    for i, c in enumerate(lat.components, start=1):
        vals = [*c.center, c.half_length, c.angle, *c.thickness_ends]
        out.append(f"component{i} = {_nums(vals)} {c.exponent}")
    if lat.alpha is not None:
        out.append(f"alpha = {_nums(lat.alpha)}")
    if lat.beta is not None:
        out.append(f"beta = {_nums(lat.beta)}")
    sh = cfg.shell
    out += ["", "[shell]", f"delta_d = {_num(sh.delta_d)}", f"samples_per_control = {sh.n_samples_per_control}"]
    for i, v in enumerate(sh.voids, start=1):
        out += [f"void{i}.center = {_nums(v.center)}", f"void{i}.radii = {_nums(v.radii)}",
                f"void{i}.order = {v.spline_order}", f"void{i}.inverted = {str(v.inverted).lower()}"]
    c = cfg.constraints
    out += ["", "[constraints]", f"v_bar = {_num(c.v_bar)}",
            f"v_lower = {'none' if c.v_lower is None else _num(c.v_lower)}", ""]
    for section, obj in (("heaviside", cfg.heaviside), ("ks", cfg.ks), ("mma", cfg.mma), ("output", cfg.output)):
        out.append(f"[{section}]")
        for f in fields(obj):
            val = getattr(obj, f.name)
            if isinstance(val, bool):
                out.append(f"{f.name} = {str(val).lower()}")
            elif isinstance(val, int):
                out.append(f"{f.name} = {val}")
            else:
                out.append(f"{f.name} = {_num(val)}")
        out.append("")
    return "\n".join(out)


def write_config(cfg: ProblemConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg), newline="\n")


def with_overrides(cfg: ProblemConfig, max_iters: int | None = None) -> ProblemConfig:
    if max_iters is None:
        return cfg
    return replace(cfg, mma=replace(cfg.mma, max_iters=max_iters, min_iters=min(cfg.mma.min_iters, max_iters)))


# ---------------------------------------------------------------------------
# iteration history
# ---------------------------------------------------------------------------

HISTORY_HEADER = ("iter", "compliance", "volume_fraction", "infill_volume_fraction", "max_rel_change")


def write_history_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in records:
            w.writerow([r.iter] + [f"{float(getattr(r, k)):.9g}" for k in HISTORY_HEADER[1:]])


def read_history_csv(path) -> list[IterationRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != HISTORY_HEADER:
        raise ValueError(f"{path}: unexpected history header")
    return [IterationRecord(int(r[0]), *(float(v) for v in r[1:])) for r in rows[1:]]


# ---------------------------------------------------------------------------
# density raster
# ---------------------------------------------------------------------------


def density_pixels(densities, grid: Grid) -> np.ndarray:
    """(ny, nx) uint8 gray levels, top row first; solid is black."""
    img = grid.element_image(np.asarray(densities, dtype=float))[::-1]
    return np.rint(255.0 * (1.0 - np.clip(img, 0.0, 1.0))).astype(np.uint8)


def write_density_raster(densities, grid: Grid, path) -> None:
    pix = density_pixels(densities, grid)
    header = f"P5\n{grid.nx_elems} {grid.ny_elems}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit graymaps are supported")
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w)


# ---------------------------------------------------------------------------
# boundaries
# ---------------------------------------------------------------------------


def extract_boundaries(nodal_phi, grid: Grid) -> list[np.ndarray]:
    """Zero contour of a nodal field by marching squares.

    Returns polylines as (k, 2) arrays in physical coordinates; closed loops
    repeat their first point at the end, open ones end on the domain edge.
    Saddle cells are resolved with the cell-center average.
    """
    nxn, nyn = grid.nx_elems + 1, grid.ny_elems + 1
    phi = np.asarray(nodal_phi, dtype=float).reshape(nyn, nxn)
    pos = phi > 0
    x0, y0 = grid.origin

    def point(edge):
        kind, i, j = edge
        if kind == "h":  # between (i, j) and (i + 1, j)
            a, b = phi[j, i], phi[j, i + 1]
            t = a / (a - b)
            return x0 + (i + t) * grid.dx, y0 + j * grid.dy
        a, b = phi[j, i], phi[j + 1, i]
        t = a / (a - b)
        return x0 + i * grid.dx, y0 + (j + t) * grid.dy

    links: dict[tuple, list] = {}

    def connect(e1, e2):
        links.setdefault(e1, []).append(e2)
        links.setdefault(e2, []).append(e1)

    cases = pos[:-1, :-1] * 1 + pos[:-1, 1:] * 2 + pos[1:, 1:] * 4 + pos[1:, :-1] * 8
    for j, i in zip(*np.nonzero((cases > 0) & (cases < 15))):
        bottom, right = ("h", i, j), ("v", i + 1, j)
        top, left = ("h", i, j + 1), ("v", i, j)
        c = cases[j, i]
        if c in (5, 10):
            center = phi[j : j + 2, i : i + 2].mean() > 0
            if (c == 5) == center:
                connect(bottom, right) if c == 10 else connect(bottom, left)
                connect(top, left) if c == 10 else connect(top, right)
            else:
                connect(bottom, left) if c == 10 else connect(bottom, right)
                connect(top, right) if c == 10 else connect(top, left)
            continue
        crossing = []
        for edge, (p, q) in (
            (bottom, (pos[j, i], pos[j, i + 1])),
            (right, (pos[j, i + 1], pos[j + 1, i + 1])),
            (top, (pos[j + 1, i], pos[j + 1, i + 1])),
            (left, (pos[j, i], pos[j + 1, i])),
        ):
            if p != q:
                crossing.append(edge)
        connect(*crossing)

    polylines, seen = [], set()
    ends = [e for e, nb in links.items() if len(nb) == 1]
    for start in ends + list(links):
        if start in seen:
            continue
        chain, prev, cur = [start], None, start
        seen.add(start)
        while True:
            nxt = [e for e in links[cur] if e != prev and (e not in seen or (e == start and len(chain) > 2))]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            chain.append(cur)
            if cur == start:
                break
            seen.add(cur)
        polylines.append(np.array([point(e) for e in chain]))
    return polylines


def polygon_area(poly) -> float:
    p = np.asarray(poly)
    return 0.5 * abs(np.dot(p[:-1, 0], p[1:, 1]) - np.dot(p[1:, 0], p[:-1, 1]))


def write_boundaries_svg(polylines, path, extent: tuple[float, float]) -> None:
    L, H = extent
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {L!r} {H!r}" '
        f'width="{L!r}" height="{H!r}">',
        f'<g transform="matrix(1 0 0 -1 0 {H!r})" fill="none" stroke="black" stroke-width="{0.002 * max(L, H)!r}">',
    ]
    for poly in polylines:
        pts = " L ".join(f"{x:.6f} {y:.6f}" for x, y in poly)
        lines.append(f'<path d="M {pts}"/>')
    lines += ["</g>", "</svg>", ""]
    Path(path).write_text("\n".join(lines), newline="\n")


def read_boundaries_svg(path) -> list[np.ndarray]:
    text = Path(path).read_text()
    out = []
    for d in re.findall(r'<path d="([^"]*)"', text):
        nums = [float(v) for v in re.findall(r"[-+0-9.eE]+", d)]
        out.append(np.array(nums).reshape(-1, 2))
    return out


# ---------------------------------------------------------------------------
# control points
# ---------------------------------------------------------------------------


def write_control_points_csv(shell: ShellSpec, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("void_index", "point_index", "x", "y"))
        for j, v in enumerate(shell.voids):
            for k, (x, y) in enumerate(v.control_points()):
                w.writerow((j, k, _fixed4(x), _fixed4(y)))


def _fixed4(v) -> str:
    # round first so tiny negatives do not print as -0.0000
    return f"{round(float(v), 4) + 0.0:.4f}"


def read_control_points_csv(path) -> np.ndarray:
    """Rows of (void_index, point_index, x, y)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ("void_index", "point_index", "x", "y"):
        raise ValueError(f"{path}: unexpected control-point header")
    return np.array([[int(r[0]), int(r[1]), float(r[2]), float(r[3])] for r in rows[1:]]).reshape(-1, 4)
