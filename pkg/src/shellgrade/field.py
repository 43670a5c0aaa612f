"""Grid sampling, regularized Heaviside and the ersatz element densities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid of bilinear elements.

    Nodes are numbered row by row from the bottom-left corner:
    ``node = j * (nx_elems + 1) + i``; elements likewise with ``nx_elems``.
    """

    nx_elems: int
    ny_elems: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx_elems < 1 or self.ny_elems < 1:
            raise ValueError("grid needs at least one element per direction")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("element sizes must be positive")

    @classmethod
    def over(cls, length: float, height: float, nx: int, ny: int) -> "Grid":
        return cls(nx, ny, length / nx, height / ny)

    @property
    def n_nodes(self) -> int:
        return (self.nx_elems + 1) * (self.ny_elems + 1)

    @property
    def n_elems(self) -> int:
        return self.nx_elems * self.ny_elems

    @property
    def element_area(self) -> float:
        return self.dx * self.dy

    @property
    def extent(self) -> tuple[float, float]:
        return self.nx_elems * self.dx, self.ny_elems * self.dy

    def node_coords(self) -> np.ndarray:
        x = self.origin[0] + self.dx * np.arange(self.nx_elems + 1)
        y = self.origin[1] + self.dy * np.arange(self.ny_elems + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def element_nodes(self) -> np.ndarray:
        """(n_elems, 4) node ids, counter-clockwise from the bottom-left corner."""
        nxn = self.nx_elems + 1
        i, j = np.meshgrid(np.arange(self.nx_elems), np.arange(self.ny_elems))
        n0 = (j * nxn + i).ravel()
        return np.column_stack([n0, n0 + 1, n0 + 1 + nxn, n0 + nxn])

    def node_multiplicity(self) -> np.ndarray:
        """Number of elements sharing each node."""
        return np.bincount(self.element_nodes().ravel(), minlength=self.n_nodes)

    def nearest_node(self, x: float, y: float) -> int:
        i = int(np.clip(round((x - self.origin[0]) / self.dx), 0, self.nx_elems))
        j = int(np.clip(round((y - self.origin[1]) / self.dy), 0, self.ny_elems))
        return j * (self.nx_elems + 1) + i

    def element_image(self, values) -> np.ndarray:
        """Reshape per-element values to (ny, nx) with row 0 at the bottom."""
        return np.asarray(values).reshape(self.ny_elems, self.nx_elems)

    def refined(self, factor: int) -> "Grid":
        return Grid(self.nx_elems * factor, self.ny_elems * factor, self.dx / factor, self.dy / factor, self.origin)


@dataclass(frozen=True)
class HeavisideParams:
    epsilon: float
    alpha: float = 1e-3
    penal: float = 2.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.penal < 1:
            raise ValueError("penal must be >= 1")

    @classmethod
    def for_grid(cls, grid: Grid, factor: float = 3.0, alpha: float = 1e-3, penal: float = 2.0):
        return cls(factor * min(grid.dx, grid.dy), alpha, penal)


def _real(a) -> np.ndarray:
    a = np.asarray(a)
    return a if np.issubdtype(a.dtype, np.floating) else a.astype(float)


def regularized_heaviside(x, hp: HeavisideParams) -> np.ndarray:
    x = _real(x)
    eps, a = hp.epsilon, hp.alpha
    band = 0.75 * (1 - a) * (x / eps - x**3 / (3 * eps**3)) + 0.5 * (1 + a)
    return np.where(x > eps, 1.0, np.where(x < -eps, a, band))


def heaviside_derivative(x, hp: HeavisideParams) -> np.ndarray:
    x = _real(x)
    eps, a = hp.epsilon, hp.alpha
    inside = np.abs(x) <= eps
    return np.where(inside, 0.75 * (1 - a) * (1 / eps - x**2 / eps**3), 0.0)


def element_density(nodal_phi, hp: HeavisideParams) -> np.ndarray:
    """Mean of H(phi)^q over the four corners (last axis)."""
    return np.mean(regularized_heaviside(nodal_phi, hp) ** hp.penal, axis=-1)


def element_densities(field, grid: Grid, hp: HeavisideParams) -> np.ndarray:
    return element_density(np.asarray(field)[grid.element_nodes()], hp)


def volume_measure(field, grid: Grid, hp: HeavisideParams):
    """Area-weighted corner average of H(phi); no penalization.

    Returned as a scalar of the field's precision.
    """
    h = regularized_heaviside(np.asarray(field)[grid.element_nodes()], hp)
    return grid.element_area * h.mean(axis=1).sum()
