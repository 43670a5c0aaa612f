"""Topology description functions for shell-graded-infill structures.

Every TDF here is positive in solid, zero on the boundary and negative in
void.  All evaluators are vectorized: ``points`` is any array whose last axis
has length 2 and the result has the leading shape of ``points``.

The structure TDF is assembled from three families of primitives:

* superellipse components (p-th root form) tiled over a lattice, each
  prototype component seeing its own coordinate perturbation,
* star-shaped voids bounded by closed B-splines,
* the expanded copies of those voids, which carve the infill region out of
  the solid region and leave a shell of thickness ``delta_d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi
B_FLOOR = 1e-9


class GeometryError(ValueError):
    """Raised for geometrically invalid curves or shells."""


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentParams:
    """One superellipse component with linearly varying half-width."""

    center: tuple[float, float]
    half_length: float
    angle: float
    thickness_ends: tuple[float, float]
    exponent: int = 6

    def __post_init__(self):
        if not self.half_length > 0:
            raise GeometryError(f"half_length must be positive, got {self.half_length}")
        if min(self.thickness_ends) <= 0:
            raise GeometryError(f"thicknesses must be positive, got {self.thickness_ends}")
        if self.exponent < 2 or self.exponent % 2:
            raise GeometryError(f"exponent must be an even integer >= 2, got {self.exponent}")


@dataclass(frozen=True)
class CPFCoefficients:
    """Trigonometric coordinate perturbation coefficients.

    ``alpha[r, 0]`` multiplies the cosine and ``alpha[r, 1]`` the sine of
    harmonic ``r`` (zero-based, so ``r = 0`` is the constant term and its
    sine basis is identically zero).
    """

    alpha: np.ndarray
    beta: np.ndarray
    domain_dims: tuple[float, float]

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1, 2)
        beta = np.asarray(self.beta, dtype=float).reshape(-1, 2)
        if len(alpha) < 1 or len(beta) < 1:
            raise GeometryError("CPF needs at least one harmonic per direction")
        if min(self.domain_dims) <= 0:
            raise GeometryError("domain dimensions must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def zeros(cls, n1: int, n2: int, domain_dims) -> "CPFCoefficients":
        return cls(np.zeros((n1, 2)), np.zeros((n2, 2)), tuple(domain_dims))


@dataclass(frozen=True)
class LatticeSpec:
    cells: tuple[int, int]
    prototype: tuple  # of (ComponentParams, CPFCoefficients)
    domain_dims: tuple[float, float]

    def __post_init__(self):
        if min(self.cells) < 1:
            raise GeometryError(f"lattice needs at least one cell per direction, got {self.cells}")
        if len(self.prototype) < 1:
            raise GeometryError("prototype cell needs at least one component")

    @property
    def cell_pitch(self) -> tuple[float, float]:
        return (self.domain_dims[0] / self.cells[0], self.domain_dims[1] / self.cells[1])

    @property
    def ncell(self) -> int:
        return self.cells[0] * self.cells[1]

    def cell_offsets(self) -> np.ndarray:
        """(ncell, 2) translation of every cell relative to the prototype cell."""
        px, py = self.cell_pitch
        ix, iy = np.meshgrid(np.arange(self.cells[0]), np.arange(self.cells[1]), indexing="ij")
        return np.column_stack([ix.ravel() * px, iy.ravel() * py])


@dataclass(frozen=True)
class VoidCurve:
    center: tuple[float, float]
    radii: np.ndarray
    spline_order: int = 2
    inverted: bool = False

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float).ravel()
        if len(radii) < 3:
            raise GeometryError("a closed curve needs at least three control points")
        object.__setattr__(self, "radii", radii)

    @property
    def control_count(self) -> int:
        return len(self.radii)

    def control_angles(self) -> np.ndarray:
        return TWO_PI * np.arange(self.control_count) / self.control_count

    def control_points(self) -> np.ndarray:
        psi = self.control_angles()
        return np.asarray(self.center) + self.radii[:, None] * np.column_stack([np.cos(psi), np.sin(psi)])

    def expansion_shift(self, delta_d: float) -> float:
        """Change of every control radius that grows the void into the solid by ``delta_d``."""
        return -delta_d if self.inverted else delta_d

    def expanded(self, delta_d: float) -> "VoidCurve":
        """The curve grown into the solid by ``delta_d`` (shrunk for an outer boundary)."""
        return VoidCurve(self.center, self.radii + self.expansion_shift(delta_d), self.spline_order, self.inverted)


@dataclass(frozen=True)
class ShellSpec:
    voids: tuple
    delta_d: float

    def __post_init__(self):
        if not self.delta_d > 0:
            raise GeometryError(f"delta_d must be positive, got {self.delta_d}")
        if len(self.voids) < 1:
            raise GeometryError("shell needs at least one void curve")
        if sum(bool(v.inverted) for v in self.voids) > 1:
            raise GeometryError("at most one void curve may be inverted")


@dataclass(frozen=True)
class AggregationParams:
    l_plus: float = 50.0
    l_minus: float = -50.0

    def __post_init__(self):
        if not (self.l_plus > 0 and self.l_minus < 0):
            raise GeometryError("need l_plus > 0 and l_minus < 0")


# ---------------------------------------------------------------------------
# K-S aggregation
# ---------------------------------------------------------------------------


def _real(a) -> np.ndarray:
    """Array view that keeps any floating dtype (extended precision included)."""
    a = np.asarray(a)
    return a if np.issubdtype(a.dtype, np.floating) else a.astype(float)


def ks_aggregate(values, l: float, axis: int = -1) -> np.ndarray:
    """Smooth max (``l > 0``) or min (``l < 0``) along ``axis``: ln(sum exp(l*v)) / l."""
    values = _real(values)
    if values.size == 0 or values.shape[axis] == 0:
        raise ValueError("ks_aggregate needs at least one value")
    if l == 0:
        raise ValueError("ks_aggregate exponent must be nonzero")
    lv = l * values
    peak = np.max(lv, axis=axis, keepdims=True)
    out = peak + np.log(np.sum(np.exp(lv - peak), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) / l


def ks_weights(values, l: float, axis: int = -1) -> np.ndarray:
    """Partial derivatives of :func:`ks_aggregate` w.r.t. each value (a softmax)."""
    lv = l * _real(values)
    e = np.exp(lv - np.max(lv, axis=axis, keepdims=True))
    e[e < 1e-300] = 0.0
    return e / np.sum(e, axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# components and lattice
# ---------------------------------------------------------------------------


@dataclass
class ComponentEval:
    """Values and local partials of a component TDF (arrays of equal shape)."""

    phi: np.ndarray
    xl: np.ndarray  # local x'
    yl: np.ndarray  # local y'
    dphi_dxl: np.ndarray  # total, including the taper b(x')
    dphi_dyl: np.ndarray
    dphi_da: np.ndarray  # total, including db/da
    dphi_dt1: np.ndarray
    dphi_dt2: np.ndarray


def _component_eval(dx, dy, a, theta, t1, t2, p, partials=True):
    theta = np.asarray(theta, dtype=np.result_type(dx, float))
    c, s = np.cos(theta), np.sin(theta)
    xl = c * dx + s * dy
    yl = -s * dx + c * dy
    b_raw = 0.5 * (t1 + t2) + 0.5 * (t2 - t1) / a * xl
    floor = B_FLOOR * a
    live = b_raw > floor
    b = np.where(live, b_raw, floor)
    X = np.abs(xl) / a
    Y = np.abs(yl) / b
    m = np.maximum(X, Y)
    safe = np.where(m > 0, m, 1.0)
    S = np.where(m > 0, m * ((X / safe) ** p + (Y / safe) ** p) ** (1.0 / p), 0.0)
    phi = 1.0 - S
    if not partials:
        return ComponentEval(phi, xl, yl, *(None,) * 5)
    sS = np.where(S > 0, S, 1.0)
    # d S / d X = (X/S)^(p-1), bounded even at the center
    gx = np.where(S > 0, (X / sS) ** (p - 1), 0.0) * np.sign(xl)
    gy = np.where(S > 0, (Y / sS) ** (p - 1), 0.0) * np.sign(yl)
    dphi_dxl_b = -gx / a
    dphi_dyl = -gy / b
    dphi_da_b = gx * xl / a**2
    dphi_db = gy * yl / b**2
    live = live.astype(float)
    db_dxl = live * 0.5 * (t2 - t1) / a
    db_da = live * -0.5 * (t2 - t1) * xl / a**2
    db_dt1 = live * (0.5 - 0.5 * xl / a)
    db_dt2 = live * (0.5 + 0.5 * xl / a)
    return ComponentEval(
        phi=phi,
        xl=xl,
        yl=yl,
        dphi_dxl=dphi_dxl_b + dphi_db * db_dxl,
        dphi_dyl=dphi_dyl,
        dphi_da=dphi_da_b + dphi_db * db_da,
        dphi_dt1=dphi_db * db_dt1,
        dphi_dt2=dphi_db * db_dt2,
    )


def component_tdf(points, comp: ComponentParams) -> np.ndarray:
    """p-th root superellipse TDF, equal to 1 at the center and 0 on the boundary."""
    pts = _real(points)
    dx = pts[..., 0] - comp.center[0]
    dy = pts[..., 1] - comp.center[1]
    t1, t2 = comp.thickness_ends
    return _component_eval(dx, dy, comp.half_length, comp.angle, t1, t2, comp.exponent, partials=False).phi


def cpf_basis(coord, n_harmonics: int, span: float) -> tuple[np.ndarray, np.ndarray]:
    """Cosine and sine bases, each of shape coord.shape + (n_harmonics,)."""
    r = np.arange(n_harmonics)
    arg = (_real(coord)[..., None] - 0.5 * span) * (r * np.pi / span)
    return np.cos(arg), np.sin(arg)


def perturb_point(points, cpf: CPFCoefficients) -> np.ndarray:
    """Apply x -> x + f(x), y -> y + g(y)."""
    pts = _real(points)
    L, H = cpf.domain_dims
    cx, sx = cpf_basis(pts[..., 0], len(cpf.alpha), L)
    cy, sy = cpf_basis(pts[..., 1], len(cpf.beta), H)
    f = cx @ cpf.alpha[:, 0] + sx @ cpf.alpha[:, 1]
    g = cy @ cpf.beta[:, 0] + sy @ cpf.beta[:, 1]
    return np.stack([pts[..., 0] + f, pts[..., 1] + g], axis=-1)


# primitives whose K-S weight relative to the dominant one is below
# exp(-SCREEN_EXPONENT) (about 2e-22, under extended-precision epsilon) are
# skipped in extended-precision evaluations
SCREEN_EXPONENT = 50.0


def component_cells_eval(points, comp: ComponentParams, offsets, partials=True) -> ComponentEval:
    """Evaluate one prototype component in every lattice cell; arrays are (N, ncell)."""
    pts = _real(points).reshape(-1, 2)
    centers = np.asarray(comp.center, dtype=pts.dtype) + np.asarray(offsets, dtype=pts.dtype)
    dx = pts[:, 0:1] - centers[None, :, 0]
    dy = pts[:, 1:2] - centers[None, :, 1]
    t1, t2 = comp.thickness_ends
    return _component_eval(dx, dy, comp.half_length, comp.angle, t1, t2, comp.exponent, partials)


def component_lattice_tdf(points, comp: ComponentParams, offsets, l_plus: float) -> np.ndarray:
    """K-S max over cells of one (already perturbed) component, values only.

    In extended precision the cells are screened in double precision first;
    cells whose weight would fall below exp(-SCREEN_EXPONENT) are skipped.
    """
    pts = _real(points).reshape(-1, 2)
    if pts.dtype == np.float64:
        return ks_aggregate(component_cells_eval(pts, comp, offsets, partials=False).phi, l_plus, axis=1)
    coarse = component_cells_eval(pts.astype(float), comp, offsets, partials=False).phi
    rows, cols = np.nonzero(coarse >= coarse.max(axis=1, keepdims=True) - SCREEN_EXPONENT / l_plus)
    centers = np.asarray(comp.center, dtype=pts.dtype) + np.asarray(offsets, dtype=pts.dtype)[cols]
    t1, t2 = comp.thickness_ends
    phi = _component_eval(pts[rows, 0] - centers[:, 0], pts[rows, 1] - centers[:, 1], comp.half_length,
                          comp.angle, t1, t2, comp.exponent, partials=False).phi
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    lv = l_plus * phi
    peak = np.maximum.reduceat(lv, starts)
    total = np.add.reduceat(np.exp(lv - np.repeat(peak, np.diff(np.r_[starts, len(rows)]))), starts)
    return (peak + np.log(total)) / l_plus


def lattice_tdf(points, lat: LatticeSpec, agg: AggregationParams = AggregationParams()) -> np.ndarray:
    """Graded lattice TDF: K-S max over cells, then over prototype components."""
    pts = _real(points)
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, 2)
    offsets = lat.cell_offsets()
    per_comp = []
    for comp, cpf in lat.prototype:
        per_comp.append(component_lattice_tdf(perturb_point(flat, cpf), comp, offsets, agg.l_plus))
    return ks_aggregate(np.stack(per_comp, axis=1), agg.l_plus, axis=1).reshape(shape)


# ---------------------------------------------------------------------------
# B-spline voids
# ---------------------------------------------------------------------------


def closed_bspline_basis(mu, n: int, degree: int = 2) -> np.ndarray:
    """Basis weights of a closed uniform B-spline at parameters ``mu`` in [0, 1).

    De Boor's recursion is run on one-hot control vectors, so row ``i`` holds
    the weight of each of the ``n`` control points in the curve point at
    ``mu[i]``.  The parameter is shifted by half a support so that
    ``mu = k/n`` sits opposite control point ``k``.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    u = (mu * n + 0.5 * (degree + 1)) % n
    span = np.floor(u).astype(int)
    span = np.minimum(span, n - 1)
    eye = np.eye(n)
    # d[:, j] holds control "point" span - degree + j
    d = np.stack([eye[(span - degree + j) % n] for j in range(degree + 1)], axis=1)
    for r in range(1, degree + 1):
        for j in range(degree, r - 1, -1):
            knot = span - degree + j
            alpha = ((u - knot) / (degree + 1 - r))[:, None]
            d[:, j] = (1.0 - alpha) * d[:, j - 1] + alpha * d[:, j]
    return d[:, degree]


@dataclass(frozen=True)
class RadiusTable:
    """Periodic piecewise-linear map psi -> r of a sampled closed curve.

    Rows are samples at increasing polar angle; the last row repeats the
    first shifted by 2*pi.  ``dr`` and ``dpsi`` hold the partials of each
    sample's radius and angle with respect to every control radius at the
    sample's (fixed) spline parameter.
    """

    psi: np.ndarray  # (m+1,)
    r: np.ndarray  # (m+1,)
    dr: np.ndarray  # (m+1, n)
    dpsi: np.ndarray  # (m+1, n)
    mu: np.ndarray = field(repr=False, default=None)

    def lookup(self, psi_query):
        """Interpolate r at the query angles; returns (r, idx, t, wrapped_psi)."""
        psi0 = self.psi[0]
        q = psi0 + np.mod(np.asarray(psi_query, dtype=float) - psi0, TWO_PI)
        m = len(self.psi) - 1
        idx = np.clip(np.searchsorted(self.psi, q, side="right") - 1, 0, m - 1)
        width = self.psi[idx + 1] - self.psi[idx]
        t = (q - self.psi[idx]) / width
        r = self.r[idx] + t * (self.r[idx + 1] - self.r[idx])
        return r, idx, t, q

    def __call__(self, psi_query) -> np.ndarray:
        return self.lookup(psi_query)[0]


def build_radius_table(curve: VoidCurve, n_samples: int | None = None, void_index: int = 0) -> RadiusTable:
    n = curve.control_count
    if n_samples is None:
        n_samples = 64 * n
    if n_samples < 8 * n:
        raise ValueError(f"n_samples must be at least {8 * n}, got {n_samples}")
    if np.any(curve.radii <= 0):
        raise GeometryError(f"void {void_index}: control radii must be positive")
    mu = np.arange(n_samples) / n_samples
    N = closed_bspline_basis(mu, n, curve.spline_order)
    psi_k = curve.control_angles()
    e = np.column_stack([np.cos(psi_k), np.sin(psi_k)])  # (n, 2)
    c = N @ (curve.radii[:, None] * e)  # sample points relative to the center
    r = np.hypot(c[:, 0], c[:, 1])
    if np.any(r <= 0):
        raise GeometryError(f"void {void_index}: curve passes through its center")
    psi = np.unwrap(np.arctan2(c[:, 1], c[:, 0]))
    steps = np.diff(np.append(psi, psi[0] + TWO_PI))
    if np.any(steps <= 0) or not np.isclose(psi[-1] - psi[0] + steps[-1], TWO_PI):
        raise GeometryError(f"void {void_index}: curve is not star-shaped about its center")
    u = c / r[:, None]
    dr = N * (u @ e.T)
    dpsi = N * (u[:, 0:1] * e[None, :, 1] - u[:, 1:2] * e[None, :, 0]) / r[:, None]
    return RadiusTable(
        psi=np.append(psi, psi[0] + TWO_PI),
        r=np.append(r, r[0]),
        dr=np.vstack([dr, dr[:1]]),
        dpsi=np.vstack([dpsi, dpsi[:1]]),
        mu=mu,
    )


def _cardinal_bspline(t, degree: int) -> np.ndarray:
    """Uniform cardinal B-spline supported on [0, degree + 1)."""
    t = np.asarray(t)
    if degree == 2:
        return np.where(
            (t < 0) | (t >= 3),
            0.0,
            np.where(t < 1, 0.5 * t * t, np.where(t < 2, -t * t + 3 * t - 1.5, 0.5 * (3 - t) ** 2)),
        )
    if degree == 1:
        return np.where((t < 0) | (t >= 2), 0.0, np.where(t < 1, t, 2 - t))
    if degree == 0:
        return ((t >= 0) & (t < 1)).astype(float)
    return (t * _cardinal_bspline(t, degree - 1) + (degree + 1 - t) * _cardinal_bspline(t - 1, degree - 1)) / degree


def closed_bspline_local(mu, n: int, degree: int = 2):
    """Nonzero basis weights of a closed uniform B-spline and their ``mu`` derivatives.

    Returns (k, w, dw), each of shape mu.shape + (degree + 1,): control point
    indices, weights and d(weight)/d(mu).  Same convention as
    :func:`closed_bspline_basis`.
    """
    mu = np.asarray(mu)
    if not np.issubdtype(mu.dtype, np.floating):
        mu = mu.astype(float)
    u = mu * n + 0.5 * (degree + 1)
    base = np.floor(u)
    frac = (u - base)[..., None]
    j = np.arange(degree + 1)
    k = (base.astype(int)[..., None] - j) % n
    w = _cardinal_bspline(frac + j, degree)
    dw = n * (_cardinal_bspline(frac + j, degree - 1) - _cardinal_bspline(frac + j - 1, degree - 1))
    return k, w, dw


def closed_bspline_derivs(mu, n: int, degree: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Dense basis weights and their ``mu`` derivatives, shape mu.shape + (n,)."""
    k, w, dw = closed_bspline_local(mu, n, degree)
    N = np.zeros(k.shape[:-1] + (n,), dtype=w.dtype)
    dN = np.zeros_like(N)
    np.put_along_axis(N, k, w, axis=-1)
    np.put_along_axis(dN, k, dw, axis=-1)
    return N, dN


@dataclass
class VoidEval:
    phi: np.ndarray  # (N,)
    dphi_dcenter: np.ndarray  # (N, 2)
    dphi_dradii: np.ndarray  # (N, n)


_RHO_FLOOR = 1e-12
_NEWTON_STEPS = 4


def _exact_radius(curve: VoidCurve, table: RadiusTable, psi_query, radii):
    """Polar radius of the spline itself at the query angles.

    The table seeds the spline parameter and Newton's method drives the
    curve point onto the query ray.  Returns r, dr/dpsi and dr/dd_k, all in
    the precision of ``psi_query``.
    """
    n, deg = curve.control_count, curve.spline_order
    wt = psi_query.dtype
    _, idx, t, _ = table.lookup(psi_query)
    m = len(table.psi) - 1
    mu = ((idx + t) / m + table.mu[0]).astype(wt)
    ang = TWO_PI * np.arange(n, dtype=wt) / n
    e = np.column_stack([np.cos(ang), np.sin(ang)])
    P = radii[:, None] * e
    cs, sn = np.cos(psi_query), np.sin(psi_query)

    def curve_at(mu, P=P):
        k, w, dw = closed_bspline_local(mu, n, deg)
        Pk = P[k]  # (N, deg+1, 2)
        return k, w, np.einsum("nj,njc->nc", w, Pk), np.einsum("nj,njc->nc", dw, Pk)

    def newton(mu, P, cs, sn, steps):
        for _ in range(steps):
            _, _, Q, dQ = curve_at(mu, P)
            mu = mu - (Q[:, 0] * sn - Q[:, 1] * cs) / (dQ[:, 0] * sn - dQ[:, 1] * cs)
        return mu

    if wt != np.float64:
        # converge in double precision, then polish
        mu = newton(mu.astype(float), P.astype(float), cs.astype(float), sn.astype(float), _NEWTON_STEPS)
        mu = newton(mu.astype(wt), P, cs, sn, 2)
    else:
        mu = newton(mu, P, cs, sn, _NEWTON_STEPS)
    k, w, Q, dQ = curve_at(mu)
    dg = dQ[:, 0] * sn - dQ[:, 1] * cs
    r = Q[:, 0] * cs + Q[:, 1] * sn
    dq_u = dQ[:, 0] * cs + dQ[:, 1] * sn
    r_psi = -dq_u * r / dg
    # moving a control radius slides the curve point along the ray
    ek = e[k]
    e_cross = ek[..., 0] * sn[:, None] - ek[..., 1] * cs[:, None]
    e_dot = ek[..., 0] * cs[:, None] + ek[..., 1] * sn[:, None]
    r_d = np.zeros((len(r), n), dtype=wt)
    np.add.at(r_d, (np.arange(len(r))[:, None], k), w * (e_dot - (dq_u / dg)[:, None] * e_cross))
    return r, r_psi, r_d


def void_eval(points, curve: VoidCurve, table: RadiusTable, partials=True, exact=True, radius_shift=0.0) -> VoidEval:
    """Void TDF (distance to the center minus the boundary radius) and its partials.

    With ``exact`` the radius is that of the spline itself, which is C1 in
    the polar angle; otherwise the tabulated piecewise-linear radius is used
    and the partials are those of the interpolated table.  ``radius_shift``
    is added to every control radius in the working precision (used for the
    expanded voids).  Computation runs in the floating dtype of ``points``.
    """
    pts = _real(points).reshape(-1, 2)
    wt = pts.dtype
    center = np.asarray(curve.center, dtype=wt)
    dx = pts[:, 0] - center[0]
    dy = pts[:, 1] - center[1]
    rho = np.hypot(dx, dy)
    psi = np.arctan2(dy, dx)
    sign = -1.0 if curve.inverted else 1.0
    if exact:
        radii = curve.radii.astype(wt) + np.asarray(radius_shift, dtype=wt)
        r, slope, dr = _exact_radius(curve, table, psi, radii)
        phi = sign * (rho - r)
        if not partials:
            return VoidEval(phi, None, None)
    else:
        r, idx, t, q = table.lookup(psi)
        phi = sign * (rho - r)
        if not partials:
            return VoidEval(phi, None, None)
        width = table.psi[idx + 1] - table.psi[idx]
        rise = table.r[idx + 1] - table.r[idx]
        slope = rise / width
        # interpolation weight t depends on the moving breakpoints psi_idx, psi_idx+1
        dpsi_lo = table.dpsi[idx]
        dpsi_hi = table.dpsi[idx + 1]
        dt = (-dpsi_lo * width[:, None] - (q - table.psi[idx])[:, None] * (dpsi_hi - dpsi_lo)) / width[:, None] ** 2
        dr = (1.0 - t)[:, None] * table.dr[idx] + t[:, None] * table.dr[idx + 1] + rise[:, None] * dt
    rho_s = np.maximum(rho, _RHO_FLOOR)
    dphi_dx0 = -dx / rho_s - slope * dy / rho_s**2
    dphi_dy0 = -dy / rho_s + slope * dx / rho_s**2
    return VoidEval(phi, sign * np.column_stack([dphi_dx0, dphi_dy0]), -sign * dr)


def void_family_values(points, voids, tables, shifts=None, l_minus: float = -50.0) -> np.ndarray:
    """(N, n_voids) void TDF values, with screening in extended precision.

    Pairs whose K-S min weight would fall below exp(-SCREEN_EXPONENT) cannot
    influence the aggregate at working precision; they are returned as +inf
    so the aggregate gives them zero weight.
    """
    pts = _real(points).reshape(-1, 2)
    shifts = [0.0] * len(voids) if shifts is None else shifts
    if pts.dtype == np.float64:
        return np.column_stack(
            [void_eval(pts, v, t, partials=False, radius_shift=sh).phi for v, t, sh in zip(voids, tables, shifts)]
        )
    coarse = np.column_stack(
        [void_eval(pts.astype(float), v, t, partials=False, exact=False).phi for v, t in zip(voids, tables)]
    )
    keep = coarse <= coarse.min(axis=1, keepdims=True) + SCREEN_EXPONENT / abs(l_minus)
    out = np.full(coarse.shape, np.inf, dtype=pts.dtype)
    for j, (v, t, sh) in enumerate(zip(voids, tables, shifts)):
        rows = np.flatnonzero(keep[:, j])
        if len(rows):
            out[rows, j] = void_eval(pts[rows], v, t, partials=False, radius_shift=sh).phi
    return out


def void_tdf(points, curve: VoidCurve, table: RadiusTable | None = None, exact: bool = True) -> np.ndarray:
    """Distance to the center minus the boundary radius (sign flipped if inverted)."""
    pts = _real(points)
    if table is None:
        table = build_radius_table(curve)
    return void_eval(pts, curve, table, partials=False, exact=exact).phi.reshape(pts.shape[:-1])


def shell_tables(shell: ShellSpec, n_samples: int | None = None):
    """Radius tables for the original and the expanded void families."""
    tables, ext_tables = [], []
    for j, v in enumerate(shell.voids):
        ext = v.expanded(shell.delta_d)
        if np.any(ext.radii <= 0):
            raise GeometryError(f"void {j}: shell thickness {shell.delta_d} exceeds the outer boundary radius")
        tables.append(build_radius_table(v, n_samples, j))
        ext_tables.append(build_radius_table(ext, n_samples, j))
    return tables, ext_tables


def shell_tdfs(points, shell: ShellSpec, agg: AggregationParams = AggregationParams(), tables=None):
    """(phi0, phi0_ext): K-S min over the original and over the expanded voids."""
    pts = _real(points)
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, 2)
    if tables is None:
        tables = shell_tables(shell)
    tabs, ext_tabs = tables
    vals = void_family_values(flat, shell.voids, tabs, l_minus=agg.l_minus)
    shifts = [v.expansion_shift(shell.delta_d) for v in shell.voids]
    ext = void_family_values(flat, shell.voids, ext_tabs, shifts, agg.l_minus)
    return ks_aggregate(vals, agg.l_minus, axis=1).reshape(shape), ks_aggregate(ext, agg.l_minus, axis=1).reshape(shape)


def structure_tdf(phi0, phi0_ext, phi_gs, agg: AggregationParams = AggregationParams()) -> np.ndarray:
    """min(phi0, max(-phi0_ext, phi_gs)) with K-S smoothing."""
    phi1 = ks_aggregate(np.stack([-_real(phi0_ext), _real(phi_gs)], axis=-1), agg.l_plus)
    return ks_aggregate(np.stack([_real(phi0), phi1], axis=-1), agg.l_minus)
