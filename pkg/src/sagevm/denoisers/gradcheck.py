from __future__ import annotations

import numpy as np

from ..diffusion import SigmaDistribution
from ..errors import CapabilityError
from ..grid import GridSpec
from .affine import AffineDenoiser, sigma_bin_edges
from .conv import ConvDenoiser


def _random_inputs(grid: GridSpec, batch: int, sigma, rng):
    n = grid.size
    x_t = rng.standard_normal((batch, n))
    y = rng.standard_normal((batch, n))
    w = rng.integers(0, 2, size=(batch, grid.n_x))
    m = np.repeat(w, grid.n_z, axis=1).astype(np.float64)
    return x_t, y, m, np.asarray(sigma, dtype=np.float64)


def build_probe_denoiser(family: str, grid: GridSpec, seed):
    rng = np.random.default_rng(seed)
    dist = SigmaDistribution()
    if family == "affine":
        edges = sigma_bin_edges(dist)
        den = AffineDenoiser(grid.size, edges, params=0.3 * rng.standard_normal(8 * (3 * grid.size**2 + grid.size)))
        # two rows in every sigma bin so every block is exercised
        mids = np.concatenate([[edges[0] / 2], np.sqrt(edges[1:] * edges[:-1]), [edges[-1] * 2]])
        sigma = np.repeat(mids, 2)
    elif family == "conv":
        den = ConvDenoiser(grid, data_scale=0.7).init_params(rng)
        den.params = den.params + 0.1 * rng.standard_normal(den.n_params)
        sigma = np.exp(dist.p_mean + dist.p_std * rng.standard_normal(3))
    elif family == "oracle":
        raise CapabilityError("the oracle family has no parameters to check")
    else:
        raise CapabilityError(f"unknown denoiser family {family!r}")
    inputs = _random_inputs(grid, sigma.shape[0], sigma, rng)
    target = den(*inputs) + rng.standard_normal(inputs[0].shape)
    return den, inputs, target


def gradcheck(family: str, grid: GridSpec, seed=0, n_coords: int = 200, h: float = 1e-5) -> dict:
    """Central differences of ``0.5 |D - t|^2`` against the analytic backward pass."""
    den, inputs, target = build_probe_denoiser(family, grid, seed)
    rng = np.random.default_rng([int(seed), 1])
    out, cache = den.forward(*inputs)
    analytic = den.backward(cache, out - target)
    coords = rng.choice(den.n_params, size=min(n_coords, den.n_params), replace=False)
    base = den.params.copy()

    numeric = np.empty(coords.shape[0])
    for n, c in enumerate(coords):
        den.params[c] = base[c] + h
        dp = den(*inputs)
        den.params[c] = base[c] - h
        dm = den(*inputs)
        den.params[c] = base[c]
        # f(+h) - f(-h) for f = 0.5 |D - t|^2, written to avoid cancelling two large sums
        numeric[n] = np.sum((dp - dm) * (0.5 * (dp + dm) - target)) / (2 * h)
    a = analytic[coords]
    denom = np.maximum(np.abs(a), np.abs(numeric))
    rel = np.where(denom > 0, np.abs(a - numeric) / np.where(denom > 0, denom, 1.0), 0.0)
    worst = int(np.argmax(rel))
    return {
        "family": family,
        "n_params": den.n_params,
        "n_coords": int(coords.shape[0]),
        "max_rel_error": float(rel.max()),
        "median_rel_error": float(np.median(rel)),
        "worst_coordinate": int(coords[worst]),
        "worst_analytic": float(a[worst]),
        "worst_numeric": float(numeric[worst]),
    }
