"""Regular collocation grid, ghost frame and 4th-order finite differences.

Fields are indexed ``[i, j]`` with ``i`` along x and ``j`` along y. Every
stencil is written with slicing and linear combinations only, so the same code
runs on numpy arrays and on tape ``Value``s.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Union

import numpy as np

from flowtopo import autodiff as ad
from flowtopo.autodiff import Value

GHOST_DEPTH = 2

# An (nx+4) x (ny+4) array whose interior block [2:-2, 2:-2] is aligned with the grid.
PaddedField = Union[np.ndarray, Value]
Field = Union[np.ndarray, Value]


class GhostMode(str, Enum):
    """How ghost-ring values are obtained."""

    MODEL = "model"
    EXTRAPOLATE = "extrapolate"


@dataclass(frozen=True)
class Grid:
    """nx x ny lattice covering the closed rectangle, boundary rows included."""

    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self) -> None:
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"Grid needs at least 2 points per direction, got {self.nx}x{self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("Grid lengths must be positive")

    @property
    def dx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.nx, self.ny

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.nx + 2 * GHOST_DEPTH, self.ny + 2 * GHOST_DEPTH

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    @property
    def x_padded(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(-GHOST_DEPTH, self.nx + GHOST_DEPTH)

    @property
    def y_padded(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(-GHOST_DEPTH, self.ny + GHOST_DEPTH)

    def interior_coordinates(self) -> np.ndarray:
        """(nx*ny, 2) coordinates in row-major order."""
        xx, yy = np.meshgrid(self.x, self.y, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def padded_coordinates(self) -> np.ndarray:
        """((nx+4)*(ny+4), 2) coordinates of the interior plus ghost rings, row-major."""
        xx, yy = np.meshgrid(self.x_padded, self.y_padded, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def query_coordinates(self, mode: GhostMode = GhostMode.MODEL) -> np.ndarray:
        """Points a field model must be evaluated at to build padded fields in ``mode``."""
        if GhostMode(mode) is GhostMode.MODEL:
            return self.padded_coordinates()
        return self.interior_coordinates()

    def to_padded(self, values: Field, mode: GhostMode = GhostMode.MODEL) -> PaddedField:
        """Arrange values evaluated at ``query_coordinates(mode)`` into a padded field."""
        if GhostMode(mode) is GhostMode.MODEL:
            return values.reshape(self.padded_shape)
        return extrapolate_ghosts(values.reshape(self.shape))

    def to_interior(self, values: Field, mode: GhostMode = GhostMode.MODEL) -> Field:
        """Arrange values evaluated at ``query_coordinates(mode)`` into an nx x ny field."""
        if GhostMode(mode) is GhostMode.MODEL:
            return interior(values.reshape(self.padded_shape))
        return values.reshape(self.shape)


def interior(f: PaddedField) -> Field:
    return f[2:-2, 2:-2]


def fd_dx(f: PaddedField, grid: Grid) -> Field:
    return (-f[4:, 2:-2] + 8.0 * f[3:-1, 2:-2] - 8.0 * f[1:-3, 2:-2] + f[:-4, 2:-2]) / (12.0 * grid.dx)


def fd_dy(f: PaddedField, grid: Grid) -> Field:
    return (-f[2:-2, 4:] + 8.0 * f[2:-2, 3:-1] - 8.0 * f[2:-2, 1:-3] + f[2:-2, :-4]) / (12.0 * grid.dy)


def fd_dxx(f: PaddedField, grid: Grid) -> Field:
    return (
        -f[4:, 2:-2] + 16.0 * f[3:-1, 2:-2] - 30.0 * f[2:-2, 2:-2] + 16.0 * f[1:-3, 2:-2] - f[:-4, 2:-2]
    ) / (12.0 * grid.dx**2)


def fd_dyy(f: PaddedField, grid: Grid) -> Field:
    return (
        -f[2:-2, 4:] + 16.0 * f[2:-2, 3:-1] - 30.0 * f[2:-2, 2:-2] + 16.0 * f[2:-2, 1:-3] - f[2:-2, :-4]
    ) / (12.0 * grid.dy**2)


def fd_laplacian(f: PaddedField, grid: Grid) -> Field:
    return fd_dxx(f, grid) + fd_dyy(f, grid)


def integrate(f: Field, grid: Grid) -> Value | float:
    """Plain summation quadrature with weight dx*dy at every point."""
    weight = grid.dx * grid.dy
    if isinstance(f, Value):
        return f.sum() * weight
    return float(np.sum(f) * weight)


def pad(evaluator: Callable[[np.ndarray], Field], grid: Grid, mode: GhostMode = GhostMode.MODEL) -> PaddedField:
    """Build a padded field from a point evaluator."""
    values = evaluator(grid.query_coordinates(mode))
    if not isinstance(values, Value):
        values = np.asarray(values, dtype=np.float64)
    return grid.to_padded(values, mode)


def extrapolate_ghosts(f: Field) -> PaddedField:
    """Fill two ghost rings by odd reflection about the boundary value, ``f[-k] = 2 f[0] - f[k]``."""
    return _reflect(_reflect(f, axis=0), axis=1)


def _reflect(f: Field, axis: int) -> Field:
    def take(start: int, stop: int | None) -> Field:
        index = slice(start, stop)
        return f[index] if axis == 0 else f[:, index]

    first, last = take(0, 1), take(-1, None)
    pieces = [
        2.0 * first - take(2, 3),
        2.0 * first - take(1, 2),
        f,
        2.0 * last - take(-2, -1),
        2.0 * last - take(-3, -2),
    ]
    if isinstance(f, Value):
        return ad.concat(pieces, axis=axis)
    return np.concatenate(pieces, axis=axis)
