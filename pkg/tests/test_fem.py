import numpy as np
import pytest

from shellgrade.fem import (
    BoundaryConditions,
    FEMError,
    LoadCase,
    MaterialParams,
    assemble,
    assemble_and_solve,
    compliance_difference,
    element_dofs,
    q4_unit_stiffness,
)
from shellgrade.field import Grid
from shellgrade.problems import BENCHMARKS

MAT = MaterialParams(1.0, 0.3)


def _closed_form_square(E, nu):
    # classic closed form for a unit-thickness square bilinear element
    k = np.array([0.5 - nu / 6, 0.125 + nu / 8, -0.25 - nu / 12, -0.125 + 3 * nu / 8,
                  -0.25 + nu / 12, -0.125 - nu / 8, nu / 6, 0.125 - 3 * nu / 8])
    idx = [[0, 1, 2, 3, 4, 5, 6, 7], [1, 0, 7, 6, 5, 4, 3, 2], [2, 7, 0, 5, 6, 3, 4, 1], [3, 6, 5, 0, 7, 2, 1, 4],
           [4, 5, 6, 7, 0, 1, 2, 3], [5, 4, 3, 2, 1, 0, 7, 6], [6, 3, 4, 1, 2, 7, 0, 5], [7, 2, 1, 4, 3, 6, 5, 0]]
    return E / (1 - nu**2) * k[np.array(idx)]


def _gauss3_stiffness(E, nu, a, b):
    # independent integration: bilinear shape functions on [0,a]x[0,b], 3x3 Gauss points
    D = E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    g = np.sqrt(0.6)
    pts, wts = [-g, 0.0, g], [5 / 9, 8 / 9, 5 / 9]
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    K = np.zeros((8, 8))
    for s, ws in zip(pts, wts):
        for t, wt in zip(pts, wts):
            x, y = (s + 1) / 2, (t + 1) / 2  # unit-square coordinates
            B = np.zeros((3, 8))
            for n, (cx, cy) in enumerate(corners):
                fx = x if cx else 1 - x
                fy = y if cy else 1 - y
                dNdx = (1 if cx else -1) * fy / a
                dNdy = (1 if cy else -1) * fx / b
                B[:, 2 * n : 2 * n + 2] = [[dNdx, 0], [0, dNdy], [dNdy, dNdx]]
            K += ws * wt * (a * b / 4) * B.T @ D @ B
    return K


def test_stiffness_symmetric_and_rigid_modes():
    k = q4_unit_stiffness(MAT, 0.3, 0.2)
    assert np.array_equal(k, k.T)
    assert np.allclose(k @ np.tile([1.0, 0.0], 4), 0, atol=1e-14)
    assert np.allclose(k @ np.tile([0.0, 1.0], 4), 0, atol=1e-14)
    eig = np.linalg.eigvalsh(k)
    assert np.sum(np.abs(eig) < 1e-12 * eig.max()) == 3
    assert eig.min() > -1e-12


def test_square_stiffness_matches_closed_form():
    k = q4_unit_stiffness(MAT, 0.25, 0.25)
    assert np.allclose(k, _closed_form_square(1.0, 0.3), atol=1e-14)


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (0.3, 0.2), (0.05, 0.125)])
def test_stiffness_matches_three_point_quadrature(a, b):
    assert np.allclose(q4_unit_stiffness(MAT, a, b), _gauss3_stiffness(1.0, 0.3, a, b), atol=1e-13)


def test_material_validation():
    with pytest.raises(ValueError):
        MaterialParams(youngs=0.0)
    with pytest.raises(ValueError):
        MaterialParams(poisson=0.5)


def _cantilever(nx=12, ny=6):
    grid = Grid.over(2.0, 1.0, nx, ny)
    nxn = nx + 1
    fixed = tuple((j * nxn, d) for j in range(ny + 1) for d in (0, 1))
    load = LoadCase((((ny // 2) * nxn + nx, 1, -1.0),))
    return grid, BoundaryConditions(fixed), load


def _element_stresses(grid, u):
    from shellgrade.fem import strain_displacement

    B = strain_displacement(0.0, 0.0, grid.dx, grid.dy)
    return (MAT.constitutive() @ B @ u[element_dofs(grid)].T).T


def test_uniaxial_patch_test():
    L, H, nx, ny = 4.0, 2.0, 8, 4
    grid = Grid.over(L, H, nx, ny)
    nxn = nx + 1
    # rollers on the left edge, one pin against vertical drift, uniform traction 1 on the right edge
    fixed = tuple((j * nxn, 0) for j in range(ny + 1)) + ((0, 1),)
    loads = tuple((j * nxn + nx, 0, grid.dy * (0.5 if j in (0, ny) else 1.0)) for j in range(ny + 1))
    res = assemble_and_solve(np.ones(grid.n_elems), q4_unit_stiffness(MAT, grid.dx, grid.dy), grid,
                             BoundaryConditions(fixed), [LoadCase(loads)])
    sigma = _element_stresses(grid, res.displacements[0])
    assert np.max(np.abs(sigma - [1.0, 0.0, 0.0])) < 1e-10
    xy = grid.node_coords()
    u = res.displacements[0].reshape(-1, 2)
    assert np.allclose(u[:, 0], xy[:, 0] / MAT.youngs, atol=1e-10)
    assert np.allclose(u[:, 1], -MAT.poisson * xy[:, 1] / MAT.youngs, atol=1e-10)


def test_compliance_scales_inversely_with_density():
    grid, bc, load = _cantilever()
    k = q4_unit_stiffness(MAT, grid.dx, grid.dy)
    rho = np.random.default_rng(0).uniform(1e-3, 0.5, grid.n_elems)
    c1 = assemble_and_solve(rho, k, grid, bc, [load]).aggregate
    c2 = assemble_and_solve(2 * rho, k, grid, bc, [load]).aggregate
    assert c2 == pytest.approx(c1 / 2, rel=1e-12)


def test_split_load_cases_average_identity():
    grid, bc, load = _cantilever()
    k = q4_unit_stiffness(MAT, grid.dx, grid.dy)
    rho = np.random.default_rng(1).uniform(0.1, 1, grid.n_elems)
    one = assemble_and_solve(rho, k, grid, bc, [load]).aggregate
    half = LoadCase(load.point_loads, 0.5)
    two = assemble_and_solve(rho, k, grid, bc, [half, half]).aggregate
    assert two == pytest.approx(one, rel=1e-14)


def test_energy_identity_and_positivity():
    grid, bc, load = _cantilever()
    k = q4_unit_stiffness(MAT, grid.dx, grid.dy)
    rho = np.random.default_rng(2).uniform(1e-6, 1, grid.n_elems)
    res = assemble_and_solve(rho, k, grid, bc, [load])
    u = res.displacements[0]
    K = assemble(rho, k, grid)
    assert res.compliances[0] > 0
    assert u @ (K @ u) == pytest.approx(res.compliances[0], rel=1e-9)
    assert res.element_energy[0] @ rho == pytest.approx(res.compliances[0], rel=1e-9)
    assert res.residuals[0] < 1e-9


def test_density_bumps_never_increase_compliance():
    grid, bc, load = _cantilever()
    k = q4_unit_stiffness(MAT, grid.dx, grid.dy)
    rng = np.random.default_rng(3)
    rho = rng.uniform(1e-3, 0.6, grid.n_elems)
    c = assemble_and_solve(rho, k, grid, bc, [load]).aggregate
    for _ in range(20):
        bumped = rho + rng.uniform(0, 0.3, grid.n_elems) * (rng.random(grid.n_elems) < 0.2)
        c_new = assemble_and_solve(bumped, k, grid, bc, [load]).aggregate
        assert c_new <= c * (1 + 1e-12)


def test_compliance_difference_secant_identity():
    grid, bc, load = _cantilever()
    k = q4_unit_stiffness(MAT, grid.dx, grid.dy)
    rng = np.random.default_rng(4)
    rho_m = rng.uniform(0.1, 1, grid.n_elems).astype(np.longdouble)
    rho_p = rho_m * (1 + 0.01 * rng.standard_normal(grid.n_elems))
    plus = assemble_and_solve(rho_p, k, grid, bc, [load])
    minus = assemble_and_solve(rho_m, k, grid, bc, [load])
    diff = compliance_difference(plus, minus, rho_p, rho_m, k, grid)
    assert float(diff) == pytest.approx(float(plus.aggregate - minus.aggregate), rel=1e-9)


def test_singular_system_raises():
    grid = Grid.over(1.0, 1.0, 2, 2)
    k = q4_unit_stiffness(MAT, grid.dx, grid.dy)
    bc = BoundaryConditions(((0, 0),))  # rigid modes remain
    with pytest.raises(FEMError):
        assemble_and_solve(np.ones(grid.n_elems), k, grid, bc, [LoadCase(((8, 1, -1.0),))])


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_energy_identity_on_benchmarks(name):
    from shellgrade.analysis import Model, analyze

    problem = BENCHMARKS[name]("desk")
    model = Model.from_problem(problem)
    an = analyze(model, model.layout.initial(), gradients=False)
    K = assemble(an.densities, model.k_s, model.grid)
    for case, u, c in zip(model.loads, an.solve.displacements, an.solve.compliances):
        f = case.vector(len(u))
        assert f @ u == pytest.approx(c, rel=1e-9)
        assert u @ (K @ u) == pytest.approx(c, rel=1e-8)
