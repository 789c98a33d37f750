"""Chebyshev-Gauss-Lobatto grids and spectral differentiation.

Grids live in reference coordinates on [-1, 1] with nodes x_j = cos(pi j / N)
ordered descending (x_0 = 1, x_N = -1), and can be affinely mapped to a
physical interval [a, b]. The differentiation matrix follows the classical
closed form, except the diagonal is taken as the negative sum of each row's
off-diagonal entries so that constants differentiate to exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidDegreeError(ValueError):
    pass


class InvalidIntervalError(ValueError):
    pass


class OutOfDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ChebyshevGrid:
    """Gauss-Lobatto grid of polynomial degree N (N + 1 nodes)."""

    degree: int
    nodes: np.ndarray  # reference coordinates, descending from +1 to -1
    interval: tuple[float, float] = (-1.0, 1.0)

    @property
    def points(self) -> np.ndarray:
        """Nodes mapped to the physical interval (descending from b to a)."""
        a, b = self.interval
        return a + (b - a) * (self.nodes + 1.0) / 2.0

    def is_reference(self) -> bool:
        return self.interval == (-1.0, 1.0)


@dataclass(frozen=True)
class DiffMatrix:
    """Differentiation matrix acting on node values of its grid."""

    matrix: np.ndarray
    grid: ChebyshevGrid


def gauss_lobatto_nodes(degree: int) -> ChebyshevGrid:
    """Reference grid with nodes cos(pi j / N), j = 0..N."""
    if degree < 1:
        raise InvalidDegreeError(f"degree must be >= 1, got {degree}")
    j = np.arange(degree + 1)
    nodes = np.cos(np.pi * j / degree)
    nodes[0] = 1.0
    nodes[-1] = -1.0
    if degree % 2 == 0:
        nodes[degree // 2] = 0.0
    return ChebyshevGrid(degree=degree, nodes=nodes)


def closed_form_diagonal(degree: int) -> np.ndarray:
    """Textbook diagonal entries, kept as a cross-check for the row-sum trick."""
    x = gauss_lobatto_nodes(degree).nodes
    d = np.empty(degree + 1)
    d[0] = (2.0 * degree**2 + 1.0) / 6.0
    d[-1] = -d[0]
    if degree > 1:
        xi = x[1:-1]
        d[1:-1] = -xi / (2.0 * (1.0 - xi**2))
    return d


def diff_matrix(grid: ChebyshevGrid) -> DiffMatrix:
    """Differentiation matrix on a reference grid.

    Off-diagonal entries D_ij = (c_i / c_j) (-1)^(i+j) / (x_i - x_j) with
    c_0 = c_N = 2 and c_j = 1 otherwise; the diagonal is the negative row sum
    of the off-diagonals.
    """
    if not grid.is_reference():
        raise InvalidIntervalError(
            "diff_matrix expects a reference grid; use scale_to_interval afterwards"
        )
    N = grid.degree
    x = grid.nodes
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    sign = np.where((np.add.outer(np.arange(N + 1), np.arange(N + 1))) % 2 == 0, 1.0, -1.0)
    dx = np.subtract.outer(x, x)
    np.fill_diagonal(dx, 1.0)  # avoid 0/0; diagonal replaced below
    D = np.outer(c, 1.0 / c) * sign / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return DiffMatrix(matrix=D, grid=grid)


def scale_to_interval(D: DiffMatrix, a: float, b: float) -> DiffMatrix:
    """Map the grid to [a, b] and rescale D by the chain-rule factor 2/(b-a)."""
    if a >= b:
        raise InvalidIntervalError(f"need a < b, got a={a}, b={b}")
    grid = ChebyshevGrid(degree=D.grid.degree, nodes=D.grid.nodes, interval=(float(a), float(b)))
    return DiffMatrix(matrix=D.matrix * (2.0 / (b - a)), grid=grid)


def barycentric_eval(grid: ChebyshevGrid, values, x: float) -> float:
    """Evaluate the interpolant through (nodes, values) at a point x in [a, b].

    Uses the Gauss-Lobatto barycentric weights w_j = (-1)^j delta_j with
    delta_0 = delta_N = 1/2 and delta_j = 1 otherwise. Node hits return the
    stored value exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.degree + 1,):
        raise ValueError(
            f"values must have {grid.degree + 1} entries, got shape {values.shape}"
        )
    a, b = min(grid.interval), max(grid.interval)
    slack = 1e-12 * max(1.0, abs(a), abs(b))
    if x < a - slack or x > b + slack:
        raise OutOfDomainError(f"x = {x} outside [{a}, {b}]")
    pts = grid.points
    diff = x - pts
    hit = np.nonzero(diff == 0.0)[0]
    if hit.size:
        return float(values[hit[0]])
    w = np.where(np.arange(grid.degree + 1) % 2 == 0, 1.0, -1.0)
    w[0] *= 0.5
    w[-1] *= 0.5
    ratios = w / diff
    return float((ratios @ values) / ratios.sum())


def convergence_profile(u, u_deriv, degrees) -> list[tuple[int, float]]:
    """Max node error of D @ u(nodes) against the exact derivative, per degree."""
    out = []
    for N in degrees:
        grid = gauss_lobatto_nodes(N)
        D = diff_matrix(grid).matrix
        err = np.max(np.abs(D @ u(grid.nodes) - u_deriv(grid.nodes)))
        out.append((int(N), float(err)))
    return out
