"""Linear surrogate for a migrated image: band-limited depth derivative plus white noise.

The derivative is a forward difference down each column with the last cell
held at zero (replicated bottom boundary), then convolved in depth with a
zero-mean Ricker-like wavelet using zero padding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import CapabilityError, ConfigError, ShapeError
from .grid import GridSpec, VelocityField

DENSE_LIMIT = 4096


@dataclass(frozen=True)
class ImagingParams:
    wavelet_halfwidth: int = 4
    wavelet_center_scale: float = 1.5
    noise_std: float = 0.0

    def validate(self):
        if int(self.wavelet_halfwidth) < 0:
            raise ConfigError("wavelet_halfwidth must be >= 0")
        if not self.wavelet_center_scale > 0:
            raise ConfigError("wavelet_center_scale must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")


@dataclass(frozen=True)
class MigratedImage(VelocityField):
    pass


def ricker_taps(params: ImagingParams) -> np.ndarray:
    h = int(params.wavelet_halfwidth)
    if h == 0:
        return np.ones(1)  # pure derivative
    u = (np.arange(-h, h + 1) / params.wavelet_center_scale) ** 2
    taps = (1.0 - u) * np.exp(-0.5 * u)
    taps -= taps.mean()
    return taps / np.abs(taps).max()


def depth_derivative(x2d: np.ndarray) -> np.ndarray:
    d = np.zeros_like(x2d, dtype=np.float64)
    d[..., :-1] = x2d[..., 1:] - x2d[..., :-1]
    return d


def apply_imaging_operator(x: VelocityField, params: ImagingParams, seed=None) -> MigratedImage:
    params.validate()
    grid = x.grid
    img = convolve1d(depth_derivative(x.as_grid()), ricker_taps(params), axis=1, mode="constant", cval=0.0)
    if params.noise_std > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        img = img + params.noise_std * rng.standard_normal(img.shape)
    return MigratedImage(grid, img.reshape(-1))


def imaging_matrix(params: ImagingParams, grid: GridSpec, limit: int = DENSE_LIMIT) -> np.ndarray:
    params.validate()
    if grid.size > limit:
        raise CapabilityError(f"dense imaging matrix needs N <= {limit}, grid has N = {grid.size}")
    nz = grid.n_z
    deriv = np.zeros((nz, nz))
    for j in range(nz - 1):
        deriv[j, j] = -1.0
        deriv[j, j + 1] = 1.0
    taps = ricker_taps(params)
    h = len(taps) // 2
    conv = np.zeros((nz, nz))
    for j in range(nz):
        for k in range(-h, h + 1):
            if 0 <= j + k < nz:
                # taps are symmetric, so correlation and convolution coincide
                conv[j, j + k] = taps[h + k]
    return np.kron(np.eye(grid.n_x), conv @ deriv)


def check_pair(x: VelocityField, y: MigratedImage):
    if x.grid != y.grid:
        raise ShapeError("velocity field and image are on different grids")
