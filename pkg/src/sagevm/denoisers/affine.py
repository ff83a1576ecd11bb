from __future__ import annotations

import numpy as np

from ..diffusion import SigmaDistribution
from ..errors import ShapeError
from .base import Denoiser, as_batch


def sigma_bin_edges(dist: SigmaDistribution, n_bins: int = 8, span: float = 2.0) -> np.ndarray:
    """Interior edges, log-uniform over ``p_mean +- span * p_std``; outer bins are open."""
    if n_bins == 1:
        return np.zeros(0)
    z = np.linspace(-span, span, n_bins - 1)
    return np.exp(dist.p_mean + dist.p_std * z)


class AffineDenoiser(Denoiser):
    """``D = W1 x_t + W2 y + W3 m + b`` with a separate (W1, W2, W3, b) per sigma bin."""

    family = "affine"

    def __init__(self, n: int, edges, params=None):
        self.n = int(n)
        self.edges = np.asarray(edges, dtype=np.float64)
        self.n_bins = self.edges.shape[0] + 1
        self.block = 3 * self.n * self.n + self.n
        size = self.n_bins * self.block
        self.params = np.zeros(size) if params is None else np.asarray(params, dtype=np.float64).copy()
        if self.params.shape != (size,):
            raise ShapeError(f"affine denoiser expects {size} parameters, got {self.params.shape}")

    def descriptor(self):
        return {"family": self.family, "n": self.n, "edges": self.edges.tolist()}

    def init_params(self, seed=None):
        self.params = np.zeros_like(self.params)
        return self

    def unpack(self, k, params=None):
        p = self.params if params is None else params
        blk = p[k * self.block:(k + 1) * self.block]
        nn = self.n * self.n
        w = blk[:3 * nn].reshape(3, self.n, self.n)
        return w[0], w[1], w[2], blk[3 * nn:]

    def bins(self, sigma):
        return np.searchsorted(self.edges, np.asarray(sigma), side="right")

    def forward(self, x_t, y, m, sigma):
        x_t, y, m, sigma = as_batch(x_t, y, m, sigma)
        k = self.bins(sigma)
        out = np.empty_like(x_t)
        for kb in np.unique(k):
            rows = k == kb
            w1, w2, w3, b = self.unpack(kb)
            out[rows] = x_t[rows] @ w1.T + y[rows] @ w2.T + m[rows] @ w3.T + b
        return out, (x_t, y, m, k)

    def backward(self, cache, grad_out):
        x_t, y, m, k = cache
        g = np.zeros_like(self.params)
        grad_out = np.asarray(grad_out, dtype=np.float64)
        for kb in np.unique(k):
            rows = k == kb
            go = grad_out[rows]
            gw1, gw2, gw3, gb = self.unpack(kb, g)
            gw1 += go.T @ x_t[rows]
            gw2 += go.T @ y[rows]
            gw3 += go.T @ m[rows]
            gb += go.sum(axis=0)
        return g


def affine_denoise(params, x_t, y, m, sigma, edges):
    n = np.atleast_2d(x_t).shape[1]
    return AffineDenoiser(n, edges, params)(x_t, y, m, sigma)


def affine_grad(params, x_t, y, m, sigma, residual, edges):
    """Gradient of ``0.5 * |residual|^2`` where ``residual = D(...) - target``."""
    n = np.atleast_2d(x_t).shape[1]
    den = AffineDenoiser(n, edges, params)
    _, cache = den.forward(x_t, y, m, sigma)
    return den.backward(cache, residual)
