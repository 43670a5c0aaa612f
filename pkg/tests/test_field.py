import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shellgrade.field import (
    Grid,
    HeavisideParams,
    element_densities,
    element_density,
    heaviside_derivative,
    regularized_heaviside,
    volume_measure,
)

HP = HeavisideParams(epsilon=0.1, alpha=1e-3, penal=2.0)


def test_heaviside_reference_values():
    eps, a = HP.epsilon, HP.alpha
    assert regularized_heaviside(2 * eps, HP) == 1.0
    assert regularized_heaviside(0.0, HP) == pytest.approx((1 + a) / 2)
    assert regularized_heaviside(-2 * eps, HP) == a


def test_heaviside_is_c1_at_band_edges():
    eps = HP.epsilon
    for edge in (-eps, eps):
        inside = regularized_heaviside(edge * (1 - 1e-12), HP)
        outside = regularized_heaviside(edge * (1 + 1e-12), HP)
        assert inside == pytest.approx(outside, abs=1e-10)
        assert heaviside_derivative(edge, HP) == pytest.approx(0.0, abs=1e-12)


def test_heaviside_derivative_values():
    eps, a = HP.epsilon, HP.alpha
    assert heaviside_derivative(2 * eps, HP) == 0.0
    assert heaviside_derivative(0.0, HP) == pytest.approx(3 * (1 - a) / (4 * eps))


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.floats(-0.3, 0.3))
def test_heaviside_derivative_matches_fd(x):
    h = 1e-7
    if abs(abs(x) - HP.epsilon) < 2 * h:
        return  # the second derivative jumps at the band edges
    fd = (regularized_heaviside(x + h, HP) - regularized_heaviside(x - h, HP)) / (2 * h)
    exact = heaviside_derivative(x, HP)
    assert abs(fd - exact) <= 1e-8 * max(abs(exact), 1.0)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.floats(-1.0, 1.0), st.floats(0.0, 0.5))
def test_heaviside_monotone_and_bounded(x, dx):
    lo, hi = regularized_heaviside(x, HP), regularized_heaviside(x + dx, HP)
    assert HP.alpha <= lo <= hi <= 1.0


def test_element_density_examples():
    eps, a = HP.epsilon, HP.alpha
    assert element_density(np.full(4, 2 * eps), HP) == 1.0
    assert element_density(np.full(4, -2 * eps), HP) == pytest.approx(1e-6)
    mixed = element_density(np.array([2 * eps, 2 * eps, -2 * eps, -2 * eps]), HP)
    assert mixed == pytest.approx((2 + 2 * a**2) / 4)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.lists(st.floats(-0.3, 0.3), min_size=4, max_size=4), st.integers(0, 3), st.floats(0.0, 0.2))
def test_element_density_monotone_and_bounded(phi, corner, bump):
    phi = np.array(phi)
    up = phi.copy()
    up[corner] += bump
    rho, rho_up = element_density(phi, HP), element_density(up, HP)
    assert HP.alpha**HP.penal <= rho <= rho_up <= 1.0


def test_element_densities_use_corner_nodes():
    grid = Grid.over(2.0, 1.0, 2, 1)
    phi = np.array([1, 1, -1, 1, 1, -1], dtype=float)  # right column of nodes is void
    rho = element_densities(phi, grid, HP)
    assert rho[0] == 1.0
    assert rho[1] == pytest.approx(0.5 * (1 + HP.alpha**2))


def test_volume_full_and_empty():
    grid = Grid.over(5.0, 3.0, 20, 12)
    hp = HeavisideParams.for_grid(grid)
    n = grid.n_nodes
    assert volume_measure(np.full(n, 10 * hp.epsilon), grid, hp) == pytest.approx(15.0)
    assert volume_measure(np.full(n, -10 * hp.epsilon), grid, hp) == pytest.approx(hp.alpha * 15.0)


def test_volume_half_plane():
    L, H = 5.0, 3.0
    grid = Grid.over(L, H, 100, 60)
    hp = HeavisideParams.for_grid(grid)
    x = grid.node_coords()[:, 0]
    V = volume_measure(x - L / 2, grid, hp)
    assert abs(V - L * H / 2) <= 2 * hp.epsilon * H


def test_volume_uses_h_not_h_to_the_q():
    grid = Grid.over(1.0, 1.0, 1, 1)
    phi = np.zeros(4)
    assert volume_measure(phi, grid, HP) == pytest.approx((1 + HP.alpha) / 2)


def test_volume_of_disk_within_band_error():
    grid = Grid.over(2.0, 2.0, 100, 100)
    hp = HeavisideParams.for_grid(grid)
    p = grid.node_coords()
    R = 0.6
    phi = R - np.hypot(p[:, 0] - 1.0, p[:, 1] - 1.0)
    V = volume_measure(phi, grid, hp)
    assert abs(V - np.pi * R**2) < hp.epsilon * 2 * np.pi * R


def test_grid_and_params_validation():
    with pytest.raises(ValueError):
        Grid(0, 3, 1.0, 1.0)
    with pytest.raises(ValueError):
        HeavisideParams(epsilon=0.0)
    g = Grid.over(5.0, 3.0, 120, 72)
    assert g.n_nodes == 121 * 73
    assert HeavisideParams.for_grid(g).epsilon == pytest.approx(3 * 5.0 / 120)
