"""Packing of the flat design vector and its box bounds.

Layout: per prototype component ``a, theta, t1, t2`` (plus ``cx, cy`` when
centers may move), then the CPF coefficients (one shared block, or one
block per component), then per void ``x0, y0, d_1..d_n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ComponentParams, CPFCoefficients, LatticeSpec, ShellSpec, VoidCurve
from .problems import ProblemConfig


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str  # a, theta, t1, t2, cx, cy, alpha, beta, vx, vy, vd
    owner: int  # component, CPF block or void index
    index: tuple = ()
    lower: float = -np.inf
    upper: float = np.inf

    @property
    def is_mmc(self) -> bool:
        return self.kind in ("a", "theta", "t1", "t2", "cx", "cy", "alpha", "beta")


class DesignLayout:
    def __init__(self, problem: ProblemConfig):
        self.problem = problem
        lat, shell = problem.lattice, problem.shell
        L, H = problem.domain
        px, py = L / lat.cells[0], H / lat.cells[1]
        pitch = min(px, py)
        self.pitch = (px, py)
        self.n_components = len(lat.components)
        self.n_cpf_blocks = 1 if lat.shared_cpf else self.n_components
        cpf_bound = 0.25 * pitch * lat.cells[0]
        lo_c, hi_c = lat.center_range
        vars_: list[Variable] = []
        for k in range(self.n_components):
            vars_ += [
                Variable(f"comp{k}.a", "a", k, (), 0.1 * pitch, 2.0 * pitch),
                Variable(f"comp{k}.theta", "theta", k, (), -np.pi, np.pi),
                Variable(f"comp{k}.t1", "t1", k, (), 0.02 * pitch, 0.8 * pitch),
                Variable(f"comp{k}.t2", "t2", k, (), 0.02 * pitch, 0.8 * pitch),
            ]
            if lat.movable_centers:
                vars_ += [
                    Variable(f"comp{k}.cx", "cx", k, (), lo_c * px, hi_c * px),
                    Variable(f"comp{k}.cy", "cy", k, (), lo_c * py, hi_c * py),
                ]
        for b in range(self.n_cpf_blocks):
            tag = "cpf" if lat.shared_cpf else f"cpf{b}"
            for kind, count in (("alpha", lat.n1), ("beta", lat.n2)):
                for r in range(count):
                    for i in range(2):
                        vars_.append(Variable(f"{tag}.{kind}[{r},{i}]", kind, b, (r, i), -cpf_bound, cpf_bound))
        dd = shell.delta_d
        r_hi = 0.9 * min(L, H)
        # the outer boundary must be able to enclose the whole domain
        r_hi_outer = 1.5 * np.hypot(L, H)
        for j, v in enumerate(shell.voids):
            vars_ += [
                Variable(f"void{j}.x", "vx", j, (), dd, L - dd),
                Variable(f"void{j}.y", "vy", j, (), dd, H - dd),
            ]
            hi = r_hi_outer if v.inverted else r_hi
            for k in range(v.control_count):
                vars_.append(Variable(f"void{j}.d[{k}]", "vd", j, (k,), 2 * dd, hi))
        self.variables = tuple(vars_)
        self.names = tuple(v.name for v in vars_)
        self._index = {n: i for i, n in enumerate(self.names)}
        self.lower = np.array([v.lower for v in vars_])
        self.upper = np.array([v.upper for v in vars_])
        self.is_mmc = np.array([v.is_mmc for v in vars_])
        self.free = ~np.array([lat.freeze_cpf and v.kind in ("alpha", "beta") for v in vars_])
        self._build_slices()

    def _build_slices(self):
        kinds = np.array([v.kind for v in self.variables])
        owners = np.array([v.owner for v in self.variables])
        self.comp_idx = []
        for k in range(self.n_components):
            sel = owners == k
            d = {kind: int(np.flatnonzero(sel & (kinds == kind))[0]) for kind in ("a", "theta", "t1", "t2")}
            for kind in ("cx", "cy"):
                hit = np.flatnonzero(sel & (kinds == kind))
                d[kind] = int(hit[0]) if len(hit) else None
            self.comp_idx.append(d)
        lat = self.problem.lattice
        self.alpha_idx = [np.flatnonzero((kinds == "alpha") & (owners == b)).reshape(lat.n1, 2) for b in range(self.n_cpf_blocks)]
        self.beta_idx = [np.flatnonzero((kinds == "beta") & (owners == b)).reshape(lat.n2, 2) for b in range(self.n_cpf_blocks)]
        self.void_idx = []
        for j in range(len(self.problem.shell.voids)):
            sel = owners == j
            self.void_idx.append(
                (
                    int(np.flatnonzero(sel & (kinds == "vx"))[0]),
                    int(np.flatnonzero(sel & (kinds == "vy"))[0]),
                    np.flatnonzero(sel & (kinds == "vd")),
                )
            )

    def __len__(self) -> int:
        return len(self.variables)

    def index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            if not 0 <= name_or_index < len(self):
                raise KeyError(f"variable index {name_or_index} out of range")
            return int(name_or_index)
        try:
            return self._index[name_or_index]
        except KeyError:
            raise KeyError(f"unknown design variable {name_or_index!r}") from None

    def cpf_block(self, component: int) -> int:
        return 0 if self.n_cpf_blocks == 1 else component

    def initial(self) -> np.ndarray:
        lat, shell = self.problem.lattice, self.problem.shell
        x = np.zeros(len(self))
        for k, comp in enumerate(lat.components):
            idx = self.comp_idx[k]
            x[idx["a"]] = comp.half_length
            x[idx["theta"]] = comp.angle
            x[idx["t1"]], x[idx["t2"]] = comp.thickness_ends
            if idx["cx"] is not None:
                x[idx["cx"]], x[idx["cy"]] = comp.center
        for b in range(self.n_cpf_blocks):
            if lat.alpha is not None:
                x[self.alpha_idx[b]] = np.asarray(lat.alpha, dtype=float).reshape(self.n_cpf_blocks, lat.n1, 2)[b]
            if lat.beta is not None:
                x[self.beta_idx[b]] = np.asarray(lat.beta, dtype=float).reshape(self.n_cpf_blocks, lat.n2, 2)[b]
        for j, v in enumerate(shell.voids):
            ix, iy, idr = self.void_idx[j]
            x[ix], x[iy] = v.center
            x[idr] = v.radii
        return x

    def unpack(self, x) -> tuple[LatticeSpec, ShellSpec]:
        x = np.asarray(x, dtype=float)
        prob = self.problem
        lat = prob.lattice
        dims = tuple(prob.domain)
        cpfs = [CPFCoefficients(x[self.alpha_idx[b]], x[self.beta_idx[b]], dims) for b in range(self.n_cpf_blocks)]
        proto = []
        for k, comp in enumerate(lat.components):
            idx = self.comp_idx[k]
            center = comp.center if idx["cx"] is None else (x[idx["cx"]], x[idx["cy"]])
            c = ComponentParams(
                center=(float(center[0]), float(center[1])),
                half_length=float(x[idx["a"]]),
                angle=float(x[idx["theta"]]),
                thickness_ends=(float(x[idx["t1"]]), float(x[idx["t2"]])),
                exponent=comp.exponent,
            )
            proto.append((c, cpfs[self.cpf_block(k)]))
        voids = []
        for j, v in enumerate(prob.shell.voids):
            ix, iy, idr = self.void_idx[j]
            voids.append(VoidCurve((float(x[ix]), float(x[iy])), x[idr].copy(), v.spline_order, v.inverted))
        return LatticeSpec(tuple(lat.cells), tuple(proto), dims), ShellSpec(tuple(voids), prob.shell.delta_d)

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)
