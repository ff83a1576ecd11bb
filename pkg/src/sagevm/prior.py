"""Synthetic ground-truth velocity models.

Two generators: blocky layered models with rough interfaces (qualitative
stand-ins for sliced geological models) and dense Gaussian random fields whose
mean and covariance are known exactly, which is what the analytic oracles need.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError, ShapeError
from .grid import GridSpec, VelocityField


@dataclass(frozen=True)
class LayeredModelParams:
    n_layers: int = 8
    v_min: float = 1500.0
    v_max: float = 4500.0
    depth_gradient: float = 2.0
    interface_roughness: int = 2

    def validate(self):
        if int(self.n_layers) < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        # equality is allowed and gives a constant field
        if self.v_min > self.v_max:
            raise ConfigError(f"v_min ({self.v_min}) must not exceed v_max ({self.v_max})")
        if self.depth_gradient < 0 or self.interface_roughness < 0:
            raise ConfigError("depth_gradient and interface_roughness must be non-negative")


def layered_labels(params: LayeredModelParams, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
    """Layer index per cell, shape (n_x, n_z), non-decreasing down every column."""
    n_if = params.n_layers - 1
    labels = np.zeros(grid.shape, dtype=np.int64)
    if n_if == 0:
        return labels
    tops = np.sort(rng.integers(1, grid.n_z, size=n_if)) if grid.n_z > 1 else np.ones(n_if, dtype=np.int64)
    r = int(params.interface_roughness)
    jitter = rng.integers(-r, r + 1, size=(grid.n_x, n_if)) if r > 0 else np.zeros((grid.n_x, n_if), dtype=np.int64)
    depth = np.clip(tops[None, :] + jitter, 0, grid.n_z)
    depth = np.sort(depth, axis=1)  # keep interfaces monotone per column after jitter
    j = np.arange(grid.n_z)
    labels = (j[None, :, None] >= depth[:, None, :]).sum(axis=2)
    return labels


def generate_layered_field_with_labels(params: LayeredModelParams, grid: GridSpec, seed: int):
    params.validate()
    rng = np.random.default_rng(seed)
    labels = layered_labels(params, grid, rng)
    base = np.sort(rng.uniform(params.v_min, params.v_max, size=params.n_layers))
    j = np.arange(grid.n_z, dtype=np.float64)
    values = base[labels] + params.depth_gradient * j[None, :]
    values = np.clip(values, params.v_min, params.v_max)
    return VelocityField(grid, values.reshape(-1)), labels


def generate_layered_field(params: LayeredModelParams, grid: GridSpec, seed: int) -> VelocityField:
    return generate_layered_field_with_labels(params, grid, seed)[0]


def interface_mask(labels: np.ndarray, distance: int = 0) -> np.ndarray:
    """Boolean (n_x, n_z) map of cells within ``distance`` cells (Chebyshev) of a layer change in depth."""
    from scipy.ndimage import binary_dilation

    edge = np.zeros(labels.shape, dtype=bool)
    change = labels[:, 1:] != labels[:, :-1]
    edge[:, 1:] |= change
    edge[:, :-1] |= change
    if distance > 0:
        edge = binary_dilation(edge, structure=np.ones((2 * distance + 1, 2 * distance + 1), dtype=bool))
    return edge


@dataclass
class GaussianPrior:
    grid: GridSpec
    mean: np.ndarray
    covariance: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        n = self.grid.size
        if self.mean.shape != (n,) or self.covariance.shape != (n, n):
            raise ShapeError(f"prior dimensions do not match grid of size {n}")
        scale = max(np.abs(self.covariance).max(), 1e-300)
        if np.abs(self.covariance - self.covariance.T).max() > 1e-12 * scale:
            raise NumericalError("prior covariance is not symmetric")

    @cached_property
    def factor(self) -> np.ndarray:
        """Lower factor L with L @ L.T == covariance (+ jitter on the diagonal)."""
        cov = self.covariance + self.jitter * np.eye(self.grid.size)
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            pass
        # semidefinite fallback, e.g. an all-zero covariance
        evals, evecs = np.linalg.eigh(cov)
        top = max(evals.max(), 0.0)
        if evals.min() < -1e-10 * top:
            raise NumericalError(f"covariance is not positive semidefinite (min eigenvalue {evals.min():.3e})")
        return evecs * np.sqrt(np.clip(evals, 0.0, None))


def squared_exponential(grid: GridSpec, kernel_length: float, variance: float) -> np.ndarray:
    xy = grid.coordinates()
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1)
    return variance * np.exp(-d2 / (2.0 * kernel_length**2))


def build_gaussian_prior(grid: GridSpec, kernel_length: float, variance: float, mean_profile=None) -> GaussianPrior:
    if not kernel_length > 0 or not variance > 0:
        raise ConfigError("kernel_length and variance must be positive")
    if mean_profile is None:
        mean_profile = np.zeros(grid.n_z)
    mean_profile = np.asarray(mean_profile, dtype=np.float64)
    if mean_profile.shape != (grid.n_z,):
        raise ShapeError(f"mean_profile must have n_z={grid.n_z} entries")
    cov = squared_exponential(grid, kernel_length, variance)
    prior = GaussianPrior(grid, np.tile(mean_profile, grid.n_x), cov, jitter=1e-8 * variance)
    try:
        np.linalg.cholesky(cov + prior.jitter * np.eye(grid.size))
    except np.linalg.LinAlgError:
        lo = linalg.eigvalsh(cov).min()
        raise NumericalError(f"prior covariance not positive definite after jitter (min eigenvalue {lo:.3e})") from None
    return prior


def sample_gaussian_prior(prior: GaussianPrior, seed, size: int | None = None) -> VelocityField | np.ndarray:
    """One field (``size=None``) or an ``(size, N)`` array of draws ``mean + L z``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = prior.grid.size
    if size is None:
        z = rng.standard_normal(n)
        return VelocityField(prior.grid, prior.mean + prior.factor @ z)
    z = rng.standard_normal((size, n))
    return prior.mean + z @ prior.factor.T
