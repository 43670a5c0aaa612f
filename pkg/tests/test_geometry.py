import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shellgrade.geometry import (
    AggregationParams,
    ComponentParams,
    CPFCoefficients,
    GeometryError,
    LatticeSpec,
    ShellSpec,
    VoidCurve,
    build_radius_table,
    closed_bspline_basis,
    component_tdf,
    cpf_basis,
    ks_aggregate,
    lattice_tdf,
    perturb_point,
    shell_tables,
    shell_tdfs,
    structure_tdf,
    void_tdf,
)

L, H = 5.0, 3.0
finite = st.floats(-5.0, 5.0, allow_nan=False)


# ---------------------------------------------------------------------------
# K-S aggregation
# ---------------------------------------------------------------------------


def test_ks_equal_inputs():
    c = 0.37
    assert ks_aggregate([c, c], 50.0) == pytest.approx(c + np.log(2) / 50, abs=1e-15)


def test_ks_dominance():
    assert abs(ks_aggregate([0.0, 1.0], 50.0) - 1.0) < 1e-12


def test_ks_min_within_log_bound():
    v = [0.3, -0.2, 0.7]
    got = ks_aggregate(v, -50.0)
    assert min(v) - np.log(3) / 50 <= got <= min(v)


def test_ks_no_overflow_for_large_arguments():
    out = ks_aggregate([200.0, 150.0, -200.0], 50.0)
    assert np.isfinite(out) and out == pytest.approx(200.0)
    assert np.isfinite(ks_aggregate([200.0, -200.0], -50.0))


def test_ks_rejects_empty_and_zero_exponent():
    with pytest.raises(ValueError):
        ks_aggregate([], 50.0)
    with pytest.raises(ValueError):
        ks_aggregate([1.0], 0.0)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.lists(finite, min_size=1, max_size=12), st.sampled_from([5.0, 50.0, 500.0]))
def test_ks_bounds_property(values, l):
    n = len(values)
    hi = ks_aggregate(values, l)
    assert max(values) - 1e-12 <= hi <= max(values) + np.log(n) / l + 1e-12
    lo = ks_aggregate(values, -l)
    assert min(values) - np.log(n) / l - 1e-12 <= lo <= min(values) + 1e-12


# ---------------------------------------------------------------------------
# components
# ---------------------------------------------------------------------------

COMP = ComponentParams((1.0, 0.5), 0.8, 0.0, (0.1, 0.2))


def test_component_center_tip_and_midwidth():
    assert component_tdf(np.array([1.0, 0.5]), COMP) == pytest.approx(1.0)
    assert component_tdf(np.array([1.8, 0.5]), COMP) == pytest.approx(0.0, abs=1e-14)
    assert component_tdf(np.array([1.0, 0.5 + 0.15]), COMP) == pytest.approx(0.0, abs=1e-14)


def test_component_sign_matches_unrooted_form():
    rng = np.random.default_rng(0)
    comp = ComponentParams((0.0, 0.0), 1.0, 0.4, (0.3, 0.1), 6)
    pts = rng.uniform(-1.5, 1.5, (1000, 2))
    c, s = np.cos(comp.angle), np.sin(comp.angle)
    xl = c * pts[:, 0] + s * pts[:, 1]
    yl = -s * pts[:, 0] + c * pts[:, 1]
    b = np.maximum(0.2 + (-0.1) * xl, 1e-9)
    unrooted = -((xl / 1.0) ** 6 + (yl / b) ** 6 - 1.0)
    phi = component_tdf(pts, comp)
    keep = np.abs(unrooted) > 1e-9
    assert np.array_equal(np.sign(phi[keep]), np.sign(unrooted[keep]))


def test_component_taper_floor_keeps_values_finite():
    comp = ComponentParams((0.0, 0.0), 0.5, 0.0, (0.6, 0.02))
    phi = component_tdf(np.array([[3.0, 0.0], [3.0, 0.1]]), comp)
    assert np.all(np.isfinite(phi)) and np.all(phi < 0)


def test_component_rejects_invalid_parameters():
    with pytest.raises(GeometryError):
        ComponentParams((0, 0), -1.0, 0.0, (0.1, 0.1))
    with pytest.raises(GeometryError):
        ComponentParams((0, 0), 1.0, 0.0, (0.1, 0.1), exponent=5)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(
    st.floats(-np.pi, np.pi),
    st.floats(-2.0, 2.0),
    st.floats(-2.0, 2.0),
    st.floats(0.2, 1.5),
    st.floats(0.02, 0.5),
    st.floats(0.02, 0.5),
)
def test_component_rotation_equivariance(theta, px, py, a, t1, t2):
    center = np.array([0.3, -0.2])
    rotated = ComponentParams(tuple(center), a, theta, (t1, t2))
    flat = ComponentParams(tuple(center), a, 0.0, (t1, t2))
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    p = np.array([px, py])
    lhs = component_tdf(rot @ p + center, rotated)
    rhs = component_tdf(p + center, flat)
    assert lhs == pytest.approx(rhs, abs=1e-9 * max(1.0, abs(rhs)))


# ---------------------------------------------------------------------------
# coordinate perturbation
# ---------------------------------------------------------------------------


def test_cpf_zero_is_identity():
    pts = np.random.default_rng(1).uniform(0, 1, (50, 2)) * [L, H]
    assert np.array_equal(perturb_point(pts, CPFCoefficients.zeros(4, 4, (L, H))), pts)


def test_cpf_constant_cosine_term_shifts():
    alpha = np.zeros((4, 2))
    alpha[0, 0] = 0.2
    cpf = CPFCoefficients(alpha, np.zeros((4, 2)), (L, H))
    out = perturb_point(np.array([[1.3, 0.7]]), cpf)
    assert out[0] == pytest.approx([1.5, 0.7])


def test_cpf_sine_vanishes_at_midpoint():
    alpha = np.zeros((4, 2))
    alpha[1, 1] = 0.1
    cpf = CPFCoefficients(alpha, np.zeros((4, 2)), (L, H))
    out = perturb_point(np.array([[L / 2, 1.0]]), cpf)
    assert out[0, 0] == pytest.approx(L / 2, abs=1e-15)


def test_cpf_first_sine_basis_is_identically_zero():
    _, s = cpf_basis(np.linspace(0, L, 11), 4, L)
    assert np.all(s[:, 0] == 0)


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------


def _lattice(alpha=None, cells=(5, 3)):
    px, py = L / cells[0], H / cells[1]
    c = (0.5 * px, 0.5 * py)
    d = 0.6 * np.hypot(px, py)
    cpf = CPFCoefficients(np.zeros((4, 2)) if alpha is None else alpha, np.zeros((4, 2)), (L, H))
    proto = (
        (ComponentParams(c, d, np.pi / 4, (0.08, 0.08)), cpf),
        (ComponentParams(c, d, -np.pi / 4, (0.08, 0.08)), cpf),
    )
    return LatticeSpec(cells, proto, (L, H))


def test_lattice_periodic_without_cpf():
    lat = _lattice(cells=(10, 8))
    rng = np.random.default_rng(2)
    # interior points: the point and its shifted copy keep three full cells to every side,
    # beyond which the K-S weight of a missing neighbor is far below the tolerance
    px, py = lat.cell_pitch
    pts = np.column_stack([rng.uniform(3 * px, 6 * px, 1000), rng.uniform(3 * py, 4 * py, 1000)])
    base = lattice_tdf(pts, lat)
    for shift in ([px, 0.0], [0.0, py], [px, py]):
        assert np.max(np.abs(base - lattice_tdf(pts + shift, lat))) < 1e-9


def test_lattice_center_value_bias():
    lat = _lattice()
    comp = lat.prototype[0][0]
    n = 2 * lat.ncell
    v = lattice_tdf(np.array([comp.center]), lat)[0]
    assert 1.0 <= v <= 1.0 + np.log(n) / 50 + 1e-12


def test_lattice_graded_matches_brute_force_max():
    alpha = np.zeros((4, 2))
    alpha[2, 1] = 0.15
    lat = _lattice(alpha)
    pts = np.random.default_rng(3).uniform(0, 1, (1000, 2)) * [L, H]
    vals = []
    for comp, cpf in lat.prototype:
        q = perturb_point(pts, cpf)
        for off in lat.cell_offsets():
            moved = ComponentParams(tuple(np.add(comp.center, off)), comp.half_length, comp.angle, comp.thickness_ends)
            vals.append(component_tdf(q, moved))
    exact = np.max(vals, axis=0)
    got = lattice_tdf(pts, lat)
    n = 2 * lat.ncell
    assert np.all(got >= exact - 1e-12)
    assert np.all(got <= exact + np.log(n) / 50 + 1e-12)


# ---------------------------------------------------------------------------
# B-splines and radius tables
# ---------------------------------------------------------------------------


def _dense_curve(curve, m=20000):
    mu = np.arange(m) / m
    N = closed_bspline_basis(mu, curve.control_count, curve.spline_order)
    rel = N @ (curve.control_points() - np.asarray(curve.center))
    return rel


def test_bspline_partition_of_unity():
    N = closed_bspline_basis(np.linspace(0, 1, 101, endpoint=False), 12, 2)
    assert np.allclose(N.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(N >= 0)


def test_regular_polygon_table_nearly_circular_and_inside():
    R = 0.5
    curve = VoidCurve((1.0, 1.0), np.full(12, R))
    table = build_radius_table(curve)
    r = table.r
    assert np.ptp(r) / r.mean() < 0.005
    assert np.all(r < R)
    dense = np.hypot(*_dense_curve(curve).T)
    assert abs(dense.mean() - r.mean()) < 1e-4


def test_alternating_table_is_periodic():
    radii = np.where(np.arange(12) % 2 == 0, 0.4, 0.8)
    table = build_radius_table(VoidCurve((0.0, 0.0), radii))
    psi = np.linspace(-3, 3, 37)
    # the table itself closes exactly; queries differ only by the rounding of psi + 2*pi
    assert table.r[0] == table.r[-1] and np.array_equal(table.dr[0], table.dr[-1])
    assert table.psi[-1] - table.psi[0] == pytest.approx(2 * np.pi, abs=1e-15)
    assert np.allclose(table(psi), table(psi + 2 * np.pi), rtol=1e-13, atol=0)


def test_table_rejects_sparse_sampling_and_bad_curves():
    curve = VoidCurve((0.0, 0.0), np.ones(12))
    with pytest.raises(ValueError):
        build_radius_table(curve, n_samples=50)
    with pytest.raises(GeometryError, match="void 3"):
        build_radius_table(VoidCurve((0.0, 0.0), -np.ones(12)), void_index=3)


def test_table_uniform_increment_matches_fd():
    radii = 0.5 + 0.2 * np.sin(np.arange(12))
    curve = VoidCurve((0.0, 0.0), radii)
    table = build_radius_table(curve)
    h = 1e-6
    up = build_radius_table(VoidCurve((0.0, 0.0), radii + h))
    dn = build_radius_table(VoidCurve((0.0, 0.0), radii - h))
    # samples share spline parameters, so the frozen-parameter partials apply row by row
    fd = (up.r - dn.r) / (2 * h)
    predicted = table.dr.sum(axis=1)
    assert np.max(np.abs(fd - predicted) / np.abs(predicted)) < 1e-6


def test_table_partials_match_fd_per_control_radius():
    radii = 0.5 + 0.2 * np.cos(3 * np.arange(12))
    table = build_radius_table(VoidCurve((0.0, 0.0), radii))
    for k in (0, 5, 11):
        h = 1e-6 * radii[k]
        rp, rm = radii.copy(), radii.copy()
        rp[k] += h
        rm[k] -= h
        fd = (build_radius_table(VoidCurve((0, 0), rp)).r - build_radius_table(VoidCurve((0, 0), rm)).r) / (2 * h)
        live = np.abs(table.dr[:, k]) > 1e-8
        rel = np.abs(fd[live] - table.dr[live, k]) / np.abs(table.dr[live, k])
        assert rel.max() < 1e-5


# ---------------------------------------------------------------------------
# void TDFs and shell
# ---------------------------------------------------------------------------


def test_void_tdf_center_far_and_inverted():
    radii = np.full(12, 0.4)
    curve = VoidCurve((1.0, 1.0), radii)
    table = build_radius_table(curve)
    at_center = void_tdf(np.array([1.0, 1.0]), curve, table)
    assert at_center == pytest.approx(-table(0.0), rel=1e-6) and at_center < 0
    assert void_tdf(np.array([1.0 + 2 * radii.max(), 1.0]), curve, table) > 0
    inv = VoidCurve((1.0, 1.0), radii, inverted=True)
    assert void_tdf(np.array([1.0, 1.0]), inv, build_radius_table(inv)) == pytest.approx(-at_center)


def test_void_tdf_exact_curve_agrees_with_table():
    radii = 0.5 + 0.15 * np.sin(2 * np.arange(12))
    curve = VoidCurve((0.0, 0.0), radii)
    table = build_radius_table(curve)
    pts = np.random.default_rng(4).uniform(-1, 1, (500, 2))
    exact = void_tdf(pts, curve, table)
    interp = void_tdf(pts, curve, table, exact=False)
    # piecewise-linear interpolation error is second order in the sample spacing
    assert np.max(np.abs(exact - interp)) < 1e-4


def test_void_boundary_points_are_on_the_zero_level():
    radii = 0.5 + 0.15 * np.sin(2 * np.arange(12))
    curve = VoidCurve((0.2, -0.1), radii)
    rel = _dense_curve(curve, 997)
    phi = void_tdf(rel + np.asarray(curve.center), curve, build_radius_table(curve))
    assert np.max(np.abs(phi)) < 1e-12


def _two_voids():
    return ShellSpec((VoidCurve((1.0, 1.5), np.full(12, 0.4)), VoidCurve((3.5, 1.5), np.full(12, 0.5))), 0.08)


def test_shell_inside_void_and_in_solid():
    shell = _two_voids()
    phi0, ext = shell_tdfs(np.array([[1.0, 1.5], [2.3, 0.2]]), shell)
    assert phi0[0] < 0 and ext[0] < phi0[0]
    assert phi0[1] > 0 and ext[1] > 0


def test_shell_matches_brute_force_min():
    shell = _two_voids()
    pts = np.random.default_rng(5).uniform(0, 1, (1000, 2)) * [L, H]
    phi0, ext = shell_tdfs(pts, shell)
    exact = np.min([void_tdf(pts, v) for v in shell.voids], axis=0)
    exact_ext = np.min([void_tdf(pts, v.expanded(shell.delta_d)) for v in shell.voids], axis=0)
    bound = np.log(2) / 50
    assert np.all((phi0 <= exact + 1e-12) & (phi0 >= exact - bound - 1e-12))
    assert np.all((ext <= exact_ext + 1e-12) & (ext >= exact_ext - bound - 1e-12))


def test_shell_nesting_without_inverted_curves():
    shell = _two_voids()
    pts = np.random.default_rng(6).uniform(0, 1, (1000, 2)) * [L, H]
    phi0, ext = shell_tdfs(pts, shell)
    assert np.all(ext <= phi0 + np.log(2) / 50)


def test_shell_too_thick_for_outer_boundary():
    outer = VoidCurve((2.5, 1.5), np.full(12, 0.05), inverted=True)
    with pytest.raises(GeometryError):
        shell_tables(ShellSpec((outer,), 0.08))


def test_shell_allows_only_one_inverted_curve():
    outer = VoidCurve((2.5, 1.5), np.full(12, 2.0), inverted=True)
    with pytest.raises(GeometryError):
        ShellSpec((outer, outer), 0.08)


# ---------------------------------------------------------------------------
# structure composition
# ---------------------------------------------------------------------------


def test_structure_outside_shell_band_and_infill():
    agg = AggregationParams()
    assert structure_tdf(-0.5, -0.6, 0.3, agg) == pytest.approx(-0.5, abs=1e-12)
    assert structure_tdf(0.03, -0.05, -0.8, agg) > 0
    assert structure_tdf(2.0, 1.5, 0.25, agg) == pytest.approx(0.25, abs=2 * np.log(2) / 50)


def _exact_structure(phi0, ext, gs):
    return np.minimum(phi0, np.maximum(-ext, gs))


def test_sign_convention_against_set_expression():
    # grid sampling of a real shell-graded-infill layout
    lat = _lattice()
    outer = VoidCurve((2.5, 1.5), np.full(12, 2.0), inverted=True)
    shell = ShellSpec((VoidCurve((1.5, 1.5), np.full(12, 0.45)), VoidCurve((3.5, 1.5), np.full(12, 0.45)), outer), 0.08)
    xs, ys = np.meshgrid(np.linspace(0, L, 101), np.linspace(0, H, 61))
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    phi0, ext = shell_tdfs(pts, shell)
    gs = lattice_tdf(pts, lat)
    ks = structure_tdf(phi0, ext, gs)
    exact = _exact_structure(phi0, ext, gs)
    # set expression: in Omega_0 and (outside Omega_0^ext or inside the lattice)
    solid = (phi0 > 0) & ((ext < 0) | (gs > 0))
    assert np.array_equal(exact > 0, solid)
    band = 2 * np.log(max(2 * lat.ncell, len(shell.voids))) / 50
    far = np.abs(exact) > band
    assert np.array_equal(ks[far] > 0, exact[far] > 0)
    assert far.mean() > 0.5
