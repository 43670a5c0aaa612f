"""Q4 plane-stress analysis on a fixed uniform grid with density-scaled stiffness."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field import Grid

DIRECT_DOF_LIMIT = 100_000


class FEMError(RuntimeError):
    """Singular system or solver failure."""


@dataclass(frozen=True)
class MaterialParams:
    youngs: float = 1.0
    poisson: float = 0.3
    thickness: float = 1.0

    def __post_init__(self):
        if not self.youngs > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0 <= self.poisson < 0.5:
            raise ValueError("Poisson's ratio must lie in [0, 0.5)")

    def constitutive(self) -> np.ndarray:
        E, nu = self.youngs, self.poisson
        return E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


@dataclass(frozen=True)
class LoadCase:
    """Nodal point loads; ``direction`` is 0 for x and 1 for y."""

    point_loads: tuple
    weight: float = 1.0

    def vector(self, n_dofs: int) -> np.ndarray:
        f = np.zeros(n_dofs)
        for node, direction, magnitude in self.point_loads:
            f[2 * node + direction] += magnitude
        return f


@dataclass(frozen=True)
class BoundaryConditions:
    """Homogeneous Dirichlet constraints as (node, direction) pairs."""

    fixed_dofs: tuple

    def dof_ids(self) -> np.ndarray:
        return np.unique([2 * n + d for n, d in self.fixed_dofs])


@dataclass
class SolveResult:
    displacements: list
    compliances: np.ndarray
    weights: np.ndarray
    element_energy: np.ndarray  # (n_cases, n_elems): u_e^T k_s u_e
    token: str = ""
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    precise: list | None = None  # extended-precision displacements, when refined

    @property
    def aggregate(self):
        """Weighted compliance, in the precision of ``compliances``."""
        return np.dot(self.weights.astype(self.compliances.dtype), self.compliances)

    def weighted_energy(self) -> np.ndarray:
        return self.weights @ self.element_energy


def _shape_gradients(xi, eta, dx, dy):
    sx = np.array([-1, 1, 1, -1])
    sy = np.array([-1, -1, 1, 1])
    dN_dx = 0.25 * sx * (1 + eta * sy) * (2 / dx)
    dN_dy = 0.25 * sy * (1 + xi * sx) * (2 / dy)
    return dN_dx, dN_dy


def strain_displacement(xi, eta, dx, dy) -> np.ndarray:
    dN_dx, dN_dy = _shape_gradients(xi, eta, dx, dy)
    B = np.zeros((3, 8))
    B[0, 0::2] = dN_dx
    B[1, 1::2] = dN_dy
    B[2, 0::2] = dN_dy
    B[2, 1::2] = dN_dx
    return B


def q4_unit_stiffness(mat: MaterialParams, dx: float, dy: float, gauss: int = 2) -> np.ndarray:
    """Solid element stiffness by Gauss quadrature, dofs ordered (u0, v0, u1, v1, ...)."""
    if not (dx > 0 and dy > 0):
        raise ValueError("element sizes must be positive")
    pts, wts = np.polynomial.legendre.leggauss(gauss)
    D = mat.constitutive()
    k = np.zeros((8, 8))
    for xi, wx in zip(pts, wts):
        for eta, wy in zip(pts, wts):
            B = strain_displacement(xi, eta, dx, dy)
            k += wx * wy * B.T @ D @ B
    k *= 0.25 * dx * dy * mat.thickness
    k = 0.5 * (k + k.T)
    # enforce the element's mirror symmetries exactly so that symmetric
    # designs stay symmetric to rounding in ill-conditioned solves
    for P in _MIRRORS:
        k = 0.5 * (k + P @ k @ P.T)
    return k


def _mirror(node_perm, flip: int) -> np.ndarray:
    P = np.zeros((8, 8))
    for a, b in enumerate(node_perm):
        P[2 * a, 2 * b] = -1.0 if flip == 0 else 1.0
        P[2 * a + 1, 2 * b + 1] = -1.0 if flip == 1 else 1.0
    return P


# nodes ordered (0,0), (1,0), (1,1), (0,1): reflection across x = 1/2 and y = 1/2
_MIRRORS = (_mirror((1, 0, 3, 2), 0), _mirror((3, 2, 1, 0), 1))


def element_dofs(grid: Grid) -> np.ndarray:
    nodes = grid.element_nodes()
    return np.stack([2 * nodes, 2 * nodes + 1], axis=-1).reshape(-1, 8)


def assemble(densities, k_s, grid: Grid) -> sp.csr_matrix:
    edofs = element_dofs(grid)
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    densities = np.asarray(densities)
    vals = (densities[:, None] * k_s.ravel().astype(densities.dtype)[None, :]).ravel()
    n = 2 * grid.n_nodes
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _fingerprint(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _solver(K_ff, tol):
    n = K_ff.shape[0]
    if n <= DIRECT_DOF_LIMIT:
        try:
            lu = spla.splu(K_ff.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise FEMError(f"reduced stiffness matrix is singular: {exc}") from exc
        return lu.solve
    import pyamg

    M = pyamg.smoothed_aggregation_solver(K_ff.tocsr()).aspreconditioner()

    def solve(rhs):
        u, info = spla.cg(K_ff, rhs, rtol=tol, maxiter=5000, M=M)
        if info != 0:
            res = np.linalg.norm(K_ff @ u - rhs) / max(np.linalg.norm(rhs), 1e-300)
            raise FEMError(f"CG did not converge (info={info}, relative residual {res:.3e})")
        return u

    return solve


def _refined(solve, K_ext, rhs, steps):
    """Iterative refinement with residuals in extended precision."""
    u = np.asarray(solve(np.asarray(rhs, dtype=float)), dtype=np.longdouble)
    rhs = rhs.astype(np.longdouble)
    for _ in range(steps):
        r = rhs - K_ext @ u
        u += solve(np.asarray(r, dtype=float))
    return u


def assemble_and_solve(
    densities, k_s, grid: Grid, bc: BoundaryConditions, loads, tol: float = 1e-9, refine: int = 2
) -> SolveResult:
    """Solve K(rho) u = f for every load case by eliminating the fixed dofs.

    The factorization is always double precision.  ``refine`` rounds of
    iterative refinement with extended-precision residuals make the
    compliance accurate well below the conditioning limit of a plain
    double-precision solve, which finite-difference checks of small
    gradient entries rely on.  Densities given in extended precision are
    honored in the residual, and the compliances are then returned in
    extended precision as well.
    """
    densities = np.asarray(densities)
    extended = densities.dtype == np.longdouble
    n = 2 * grid.n_nodes
    K = assemble(densities, k_s, grid)
    fixed = bc.dof_ids()
    free = np.setdiff1d(np.arange(n), fixed)
    K_ext = K[free][:, free]
    K_ff = K_ext.astype(float)
    solve = _solver(K_ff, tol)
    if refine and not extended:
        K_ext = K_ext.astype(np.longdouble)
    edofs = element_dofs(grid)
    us, comps, energies, residuals, precise = [], [], [], [], []
    for case in loads:
        f = case.vector(n)
        u = np.zeros(n)
        if refine:
            u_ext = _refined(solve, K_ext, f[free], refine)
            u[free] = np.asarray(u_ext, dtype=float)
            full = np.zeros(n, dtype=np.longdouble)
            full[free] = u_ext
            precise.append(full)
            compliance = f[free].astype(np.longdouble) @ u_ext
            compliance = compliance if extended else float(compliance)
        else:
            u[free] = solve(f[free])
            compliance = float(f @ u)
        if not np.all(np.isfinite(u)):
            raise FEMError("non-finite displacements")
        fnorm = np.linalg.norm(f[free])
        if refine:
            # rounding the refined field to double precision alone can leave a residual
            # above tol on ill-conditioned systems, so judge the extended solution
            r = f[free].astype(np.longdouble) - K_ext @ u_ext
            res = float(np.linalg.norm(r.astype(float))) / max(fnorm, 1e-300)
        else:
            res = np.linalg.norm(K_ff @ u[free] - f[free]) / max(fnorm, 1e-300)
        if res > max(tol, 1e-8):
            raise FEMError(f"solve residual {res:.3e} exceeds tolerance {tol:.1e}")
        if refine:
            # energies from the refined field keep mirror-symmetric designs symmetric
            ue = full[edofs]
            energies.append(np.einsum("ei,ij,ej->e", ue, k_s.astype(np.longdouble), ue).astype(float))
        else:
            ue = u[edofs]
            energies.append(np.einsum("ei,ij,ej->e", ue, k_s, ue))
        comps.append(compliance)
        us.append(u)
        residuals.append(res)
    weights = np.array([c.weight for c in loads], dtype=float)
    return SolveResult(
        displacements=us,
        compliances=np.array(comps, dtype=np.longdouble if extended else float),
        weights=weights,
        element_energy=np.array(energies),
        token=_fingerprint(densities),
        residuals=np.array(residuals),
        precise=precise or None,
    )


def compliance_difference(plus: SolveResult, minus: SolveResult, rho_plus, rho_minus, k_s, grid: Grid):
    """C(rho+) - C(rho-) via the secant identity f.u+ - f.u- = -u+^T (K+ - K-) u-.

    The identity is exact for symmetric stiffness and shared loads, and its
    error is second order in the solver residuals, so it resolves compliance
    differences far below the rounding level of C itself.
    """
    if plus.precise is None or minus.precise is None:
        raise ValueError("both solves need refined displacements")
    edofs = element_dofs(grid)
    drho = np.asarray(rho_plus, dtype=np.longdouble) - np.asarray(rho_minus, dtype=np.longdouble)
    k = k_s.astype(np.longdouble)
    total = np.longdouble(0)
    for w, up, um in zip(plus.weights, plus.precise, minus.precise):
        cross = np.einsum("ei,ij,ej->e", up[edofs], k, um[edofs])
        total -= np.longdouble(w) * (drho @ cross)
    return total
