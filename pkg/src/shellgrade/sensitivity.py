"""Chain-rule sensitivities of compliance and of the two volume measures.

The structure TDF is a composition of K-S aggregates, so its derivative with
respect to any design variable is the product of softmax weights along the
path from that variable's primitive to the top of the composition:

    phi_s   = KSmin(phi0, phi1)
    phi1    = KSmax(-phi0_ext, phi_gs)
    phi_gs  = KSmax_k phi_k,   phi_k = KSmax_l phi_kl(x~)
    phi0    = KSmin_j phi_j,   phi0_ext = KSmin_j phi_j_ext

:func:`build_context` evaluates this for every node and keeps two dense
Jacobians, d(phi_s)/dx and d(phi0_ext)/dx, from which all gradients follow
by contraction with nodal Heaviside factors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignLayout
from .fem import SolveResult, _fingerprint, compliance_difference
from .field import Grid, HeavisideParams, element_densities, heaviside_derivative, regularized_heaviside
from .geometry import (
    AggregationParams,
    ComponentParams,
    CPFCoefficients,
    _component_eval,
    component_cells_eval,
    component_lattice_tdf,
    cpf_basis,
    ks_aggregate,
    ks_weights,
    perturb_point,
    shell_tables,
    void_eval,
    void_family_values,
)


class StaleContextError(RuntimeError):
    """The FEM solution was computed for a different design than the context."""


@dataclass(frozen=True)
class ChainContext:
    x: np.ndarray
    points: np.ndarray
    phi_s: np.ndarray
    phi0: np.ndarray
    phi0_ext: np.ndarray
    phi1: np.ndarray
    phi_gs: np.ndarray
    phi_comp: np.ndarray  # (N, nc) per-component lattice TDFs
    J_s: np.ndarray | None  # (N, nvars) d(phi_s)/dx
    J_ext: np.ndarray | None  # (N, nvars) d(phi0_ext)/dx
    layout: DesignLayout
    grid: Grid | None = None
    densities: np.ndarray | None = None
    token: str = ""


def _chunks(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def build_context(
    points,
    x,
    layout: DesignLayout,
    agg: AggregationParams = AggregationParams(),
    hp: HeavisideParams | None = None,
    grid: Grid | None = None,
    jacobian: bool = True,
    n_samples: int | None = None,
    chunk_entries: int = 2_000_000,
) -> ChainContext:
    """Evaluate every TDF of the composition, and optionally its Jacobians, at ``points``."""
    x = np.array(x, dtype=float)
    pts = np.asarray(points).reshape(-1, 2)
    wt = pts.dtype
    lattice, shell = layout.unpack(x)
    tables, ext_tables = shell_tables(shell, n_samples)
    shifts = [v.expansion_shift(shell.delta_d) for v in shell.voids]
    offsets = lattice.cell_offsets()
    n, nv, nc = len(pts), len(layout), len(lattice.prototype)
    out = {name: np.empty(n, dtype=wt) for name in ("phi_s", "phi0", "phi0_ext", "phi1", "phi_gs")}
    phi_comp = np.empty((n, nc), dtype=wt)
    J_s = np.zeros((n, nv)) if jacobian else None
    J_ext = np.zeros((n, nv)) if jacobian else None
    size = max(1, chunk_entries // max(1, len(offsets)))
    L, H = lattice.domain_dims
    for sl in _chunks(n, size):
        p = pts[sl]
        m = len(p)
        D_comp = []
        for k, (comp, cpf) in enumerate(lattice.prototype):
            if not jacobian:
                phi_comp[sl, k] = component_lattice_tdf(perturb_point(p, cpf), comp, offsets, agg.l_plus)
                continue
            ev = component_cells_eval(perturb_point(p, cpf), comp, offsets)
            phi_comp[sl, k] = ks_aggregate(ev.phi, agg.l_plus, axis=1)
            w = ks_weights(ev.phi, agg.l_plus, axis=1)
            D = np.zeros((m, nv))
            idx = layout.comp_idx[k]
            c, s = np.cos(comp.angle), np.sin(comp.angle)
            gx = np.sum(w * ev.dphi_dxl, axis=1)
            gy = np.sum(w * ev.dphi_dyl, axis=1)
            D[:, idx["a"]] = np.sum(w * ev.dphi_da, axis=1)
            D[:, idx["theta"]] = np.sum(w * (ev.dphi_dxl * ev.yl - ev.dphi_dyl * ev.xl), axis=1)
            D[:, idx["t1"]] = np.sum(w * ev.dphi_dt1, axis=1)
            D[:, idx["t2"]] = np.sum(w * ev.dphi_dt2, axis=1)
            if idx["cx"] is not None:
                D[:, idx["cx"]] = -c * gx + s * gy
                D[:, idx["cy"]] = -s * gx - c * gy
            dxt = c * gx - s * gy
            dyt = s * gx + c * gy
            b = layout.cpf_block(k)
            cx_, sx_ = cpf_basis(p[:, 0], len(cpf.alpha), L)
            cy_, sy_ = cpf_basis(p[:, 1], len(cpf.beta), H)
            D[:, layout.alpha_idx[b][:, 0]] = dxt[:, None] * cx_
            D[:, layout.alpha_idx[b][:, 1]] = dxt[:, None] * sx_
            D[:, layout.beta_idx[b][:, 0]] = dyt[:, None] * cy_
            D[:, layout.beta_idx[b][:, 1]] = dyt[:, None] * sy_
            D_comp.append(D)
        phi_gs = ks_aggregate(phi_comp[sl], agg.l_plus, axis=1)

        if jacobian:
            evs = [void_eval(p, v, t) for v, t in zip(shell.voids, tables)]
            evx = [void_eval(p, v, t, radius_shift=sh) for v, t, sh in zip(shell.voids, ext_tables, shifts)]
            vals = np.column_stack([e.phi for e in evs])
            valx = np.column_stack([e.phi for e in evx])
        else:
            vals = void_family_values(p, shell.voids, tables, l_minus=agg.l_minus)
            valx = void_family_values(p, shell.voids, ext_tables, shifts, agg.l_minus)
        phi0 = ks_aggregate(vals, agg.l_minus, axis=1)
        phi0_ext = ks_aggregate(valx, agg.l_minus, axis=1)
        top1 = np.column_stack([-phi0_ext, phi_gs])
        phi1 = ks_aggregate(top1, agg.l_plus, axis=1)
        tops = np.column_stack([phi0, phi1])
        phi_s = ks_aggregate(tops, agg.l_minus, axis=1)
        for name, val in zip(("phi_s", "phi0", "phi0_ext", "phi1", "phi_gs"), (phi_s, phi0, phi0_ext, phi1, phi_gs)):
            out[name][sl] = val
        if not jacobian:
            continue

        wg = ks_weights(phi_comp[sl], agg.l_plus, axis=1)
        d_gs = sum(wg[:, k : k + 1] * D for k, D in enumerate(D_comp))
        w0 = ks_weights(vals, agg.l_minus, axis=1)
        wx = ks_weights(valx, agg.l_minus, axis=1)
        d0 = np.zeros((m, nv))
        dx_ = np.zeros((m, nv))
        for j, (e0, ex) in enumerate(zip(evs, evx)):
            ix, iy, idr = layout.void_idx[j]
            d0[:, ix] += w0[:, j] * e0.dphi_dcenter[:, 0]
            d0[:, iy] += w0[:, j] * e0.dphi_dcenter[:, 1]
            d0[:, idr] += w0[:, j : j + 1] * e0.dphi_dradii
            dx_[:, ix] += wx[:, j] * ex.dphi_dcenter[:, 0]
            dx_[:, iy] += wx[:, j] * ex.dphi_dcenter[:, 1]
            dx_[:, idr] += wx[:, j : j + 1] * ex.dphi_dradii
        w1 = ks_weights(top1, agg.l_plus, axis=1)
        ws = ks_weights(tops, agg.l_minus, axis=1)
        d1 = -w1[:, 0:1] * dx_ + w1[:, 1:2] * d_gs
        J_s[sl] = ws[:, 0:1] * d0 + ws[:, 1:2] * d1
        J_ext[sl] = dx_

    densities = token = None
    if grid is not None and hp is not None:
        densities = element_densities(out["phi_s"], grid, hp)
        token = _fingerprint(densities)
    return ChainContext(
        x=x,
        points=pts,
        phi_comp=phi_comp,
        J_s=J_s,
        J_ext=J_ext,
        layout=layout,
        grid=grid,
        densities=densities,
        token=token or "",
        **out,
    )


def _nodal_sum(grid: Grid, per_element) -> np.ndarray:
    nodes = grid.element_nodes()
    return np.bincount(nodes.ravel(), weights=np.repeat(per_element, 4), minlength=grid.n_nodes)


def compliance_gradient(ctx: ChainContext, solve: SolveResult, hp: HeavisideParams) -> np.ndarray:
    """dC/dx of the weighted compliance, using self-adjointness (no extra solve)."""
    if ctx.J_s is None or ctx.grid is None:
        raise ValueError("context was built without Jacobians or without a grid")
    if solve.token != ctx.token:
        raise StaleContextError("FEM solution does not belong to this design context")
    q = hp.penal
    Hs = regularized_heaviside(ctx.phi_s, hp)
    dH = heaviside_derivative(ctx.phi_s, hp)
    energy = _nodal_sum(ctx.grid, solve.weighted_energy())
    factor = -(q / 4.0) * Hs ** (q - 1) * dH * energy
    return _contract(factor, ctx.J_s)


def volume_gradients(ctx: ChainContext, hp: HeavisideParams) -> tuple[np.ndarray, np.ndarray]:
    """(dV/dx, dV_in/dx); MMC columns of the second are structurally zero."""
    if ctx.J_s is None or ctx.grid is None:
        raise ValueError("context was built without Jacobians or without a grid")
    weight = ctx.grid.element_area / 4.0 * ctx.grid.node_multiplicity()
    dV = _contract(weight * heaviside_derivative(ctx.phi_s, hp), ctx.J_s)
    dVin = _contract(weight * heaviside_derivative(ctx.phi0_ext, hp), ctx.J_ext)
    return dV, dVin


def _contract(factor, J):
    # only band nodes carry a nonzero Heaviside slope
    live = np.flatnonzero(factor)
    return factor[live] @ J[live] if len(live) else np.zeros(J.shape[1])


def mmc_node_partial(ctx: ChainContext, var, nodes=None) -> np.ndarray:
    """d(phi_s)/d(var) at the context points (or a subset) for a lattice variable."""
    i = ctx.layout.index(var)
    if not ctx.layout.is_mmc[i]:
        raise KeyError(f"{ctx.layout.names[i]!r} is not a lattice variable")
    col = ctx.J_s[:, i]
    return col if nodes is None else col[nodes]


def mmv_node_partial(ctx: ChainContext, var, nodes=None) -> tuple[np.ndarray, np.ndarray]:
    """(d(phi_s)/d(var), d(phi0_ext)/d(var)) for a void variable."""
    i = ctx.layout.index(var)
    if ctx.layout.is_mmc[i]:
        raise KeyError(f"{ctx.layout.names[i]!r} is not a void variable")
    s, e = ctx.J_s[:, i], ctx.J_ext[:, i]
    return (s, e) if nodes is None else (s[nodes], e[nodes])


def component_partials(points, comp: ComponentParams, cpf: CPFCoefficients) -> dict:
    """Partials of one perturbed component TDF (single cell) w.r.t. its own variables."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    xt = perturb_point(pts, cpf)
    t1, t2 = comp.thickness_ends
    ev = _component_eval(xt[:, 0] - comp.center[0], xt[:, 1] - comp.center[1], comp.half_length, comp.angle,
                         t1, t2, comp.exponent)
    c, s = np.cos(comp.angle), np.sin(comp.angle)
    gx, gy = ev.dphi_dxl, ev.dphi_dyl
    L, H = cpf.domain_dims
    cx_, sx_ = cpf_basis(pts[:, 0], len(cpf.alpha), L)
    cy_, sy_ = cpf_basis(pts[:, 1], len(cpf.beta), H)
    dxt, dyt = c * gx - s * gy, s * gx + c * gy
    return {
        "phi": ev.phi,
        "a": ev.dphi_da,
        "theta": gx * ev.yl - gy * ev.xl,
        "t1": ev.dphi_dt1,
        "t2": ev.dphi_dt2,
        "cx": -c * gx + s * gy,
        "cy": -s * gx - c * gy,
        "alpha": np.stack([dxt[:, None] * cx_, dxt[:, None] * sx_], axis=-1),
        "beta": np.stack([dyt[:, None] * cy_, dyt[:, None] * sy_], axis=-1),
    }


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


@dataclass
class FDReport:
    indices: np.ndarray
    names: tuple
    steps: np.ndarray
    analytic: np.ndarray  # (3, k): dC, dV, dVin
    fd: np.ndarray  # (3, k)
    scale: np.ndarray  # (3,) infinity norm of each full analytic gradient
    rel_tol: float = 1e-3
    abs_tol: float = 1e-10
    rel_floor: float = 1e-12

    QUANTITIES = ("compliance", "volume", "infill_volume")

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.analytic - self.fd)

    @property
    def rel_error(self) -> np.ndarray:
        denom = np.maximum(np.abs(self.analytic), np.abs(self.fd))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, self.abs_error / denom, 0.0)

    @property
    def significant(self) -> np.ndarray:
        return np.abs(self.analytic) > self.rel_floor * self.scale[:, None]

    @property
    def ok(self) -> np.ndarray:
        return np.where(self.significant, self.rel_error < self.rel_tol, self.abs_error < self.abs_tol)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.ok))

    def worst(self) -> list[tuple[str, str, float, float, float]]:
        rows = []
        for q, name in enumerate(self.QUANTITIES):
            for j in np.flatnonzero(~self.ok[q]):
                rows.append((name, self.names[j], self.analytic[q, j], self.fd[q, j], self.rel_error[q, j]))
        return rows

    def summary(self) -> str:
        lines = [f"FD check on {len(self.indices)} variables: {'pass' if self.passed else 'FAIL'}"]
        for q, name in enumerate(self.QUANTITIES):
            sig = self.significant[q]
            worst = self.rel_error[q][sig].max() if sig.any() else 0.0
            lines.append(f"  {name}: {int(sig.sum())} significant, max rel error {worst:.3e}")
        for row in self.worst()[:10]:
            lines.append("  failing %s / %s: analytic %.6e fd %.6e rel %.2e" % row)
        return "\n".join(lines)


def fd_steps(layout: DesignLayout, x, factor: float = 1e-7) -> np.ndarray:
    """Per-variable central-difference steps."""
    L, H = layout.problem.domain
    steps = np.full(len(layout), factor * min(L, H))
    for i, v in enumerate(layout.variables):
        if v.kind in ("a", "t1", "t2"):
            steps[i] = factor * x[layout.comp_idx[v.owner]["a"]]
        elif v.kind == "theta":
            steps[i] = factor
    return steps


def finite_difference_check(x, problem, step: float = 1e-7, subset=None, model=None, analysis=None,
                            precision=np.longdouble) -> FDReport:
    """Central differences of C, V and V_in by full forward re-analysis.

    The perturbed analyses run in ``precision`` (extended by default) so that
    rounding noise in the responses stays far below the step times the
    smallest gradient entries being checked.  The compliance difference of
    the two solves is formed with the secant identity rather than by
    subtracting two nearly equal compliances.
    """
    from .analysis import Model, analyze

    if step <= 0:
        raise ValueError("step must be positive")
    model = model or Model.from_problem(problem)
    layout = model.layout
    x = np.asarray(x, dtype=float)
    base = analysis or analyze(model, x)
    if subset is None:
        idx = np.arange(len(layout))
    else:
        idx = np.array([layout.index(v) for v in subset], dtype=int)
    steps = fd_steps(layout, x, step)[idx]
    fd = np.zeros((3, len(idx)))
    for col, (i, h) in enumerate(zip(idx, steps)):
        runs, pos = [], []
        for sign in (1.0, -1.0):
            xp = x.copy()
            xp[i] += sign * h
            runs.append(analyze(model, xp, gradients=False, precision=precision))
            pos.append(xp[i])
        plus, minus = runs
        if plus.solve.precise is not None and minus.solve.precise is not None:
            dc = compliance_difference(plus.solve, minus.solve, plus.densities, minus.densities, model.k_s, model.grid)
        else:
            dc = plus.compliance - minus.compliance
        diff = np.array([dc, plus.volume - minus.volume, plus.volume_in - minus.volume_in], dtype=precision)
        # divide by the step actually taken after rounding of x +- h
        fd[:, col] = diff / (np.asarray(pos[0], dtype=precision) - pos[1])
    full = np.vstack([base.dC, base.dV, base.dVin])
    return FDReport(
        indices=idx,
        names=tuple(layout.names[i] for i in idx),
        steps=steps,
        analytic=full[:, idx],
        fd=fd,
        scale=np.abs(full).max(axis=1),
    )
