from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError


@dataclass(frozen=True)
class GridSpec:
    """Regular 2D grid. Flat index of cell (lateral i, depth j) is ``i * n_z + j``,
    so a field reshapes to ``(n_x, n_z)`` in C order and each well column is a
    contiguous block."""

    n_x: int
    n_z: int
    dx: float = 1.0
    dz: float = 1.0

    def __post_init__(self):
        if int(self.n_x) < 1 or int(self.n_z) < 1:
            raise ConfigError(f"grid dims must be positive, got {self.n_x}x{self.n_z}")
        if not (self.dx > 0 and self.dz > 0):
            raise ConfigError("cell sizes must be positive")

    @property
    def size(self) -> int:
        return self.n_x * self.n_z

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_z)

    def index(self, i: int, j: int) -> int:
        return i * self.n_z + j

    def coordinates(self) -> np.ndarray:
        """(N, 2) array of cell positions in meters, ordered by flat index."""
        ii, jj = np.meshgrid(np.arange(self.n_x), np.arange(self.n_z), indexing="ij")
        return np.stack([ii.ravel() * self.dx, jj.ravel() * self.dz], axis=1)

    def check(self, values: np.ndarray) -> np.ndarray:
        """Return ``values`` flattened, raising ShapeError if it does not fit the grid."""
        values = np.asarray(values)
        if values.shape == self.shape:
            return values.reshape(-1)
        if values.ndim != 1 or values.shape[0] != self.size:
            raise ShapeError(f"expected {self.size} values for a {self.n_x}x{self.n_z} grid, got shape {values.shape}")
        return values


@dataclass(frozen=True)
class VelocityField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = self.grid.check(self.values)
        if not np.all(np.isfinite(values)):
            raise NumericalError("field values must be finite")
        object.__setattr__(self, "values", values)

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)
