"""Two-level convolutional encoder-decoder with an explicit backward pass.

Activations are kept channels-last, shape (B, n_x, n_z, C). Convolutions are
circular along the lateral axis and reflective along depth.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ConfigError, NumericalError, ShapeError
from ..grid import GridSpec
from .base import PRECONDITIONING, Denoiser, as_batch, preconditioning

IN_CHANNELS = 4


def _pad(x, p):
    x = np.pad(x, ((0, 0), (p, p), (0, 0), (0, 0)), mode="wrap")
    return np.pad(x, ((0, 0), (0, 0), (p, p), (0, 0)), mode="reflect")


def _unpad(gp, p):
    """Adjoint of ``_pad``: fold padded gradients back onto the cells they copied."""
    h = gp.shape[1] - 2 * p
    w = gp.shape[2] - 2 * p
    g = gp[:, p:p + h].copy()
    g[:, h - p:h] += gp[:, :p]
    g[:, :p] += gp[:, h + p:]
    out = g[:, :, p:p + w].copy()
    for i in range(p):
        out[:, :, p - i] += g[:, :, i]
        out[:, :, w - 2 - i] += g[:, :, w + p + i]
    return out


def conv_forward(x, weight, bias, k):
    """Sum of k*k shifted matmuls; weight rows are ordered (channel, di, dj)."""
    b, h, w, c = x.shape
    xp = _pad(x, k // 2)
    wr = weight.reshape(c, k, k, -1)
    out = np.empty((b, h, w, wr.shape[-1]), dtype=np.result_type(x, weight))
    out[...] = bias
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + h, j:j + w, :] @ wr[:, i, j, :]
    return out, xp


def conv_backward(grad, xp, weight, x_shape, k, need_input=True):
    b, h, w, c = x_shape
    wr = weight.reshape(c, k, k, -1)
    g2 = grad.reshape(-1, wr.shape[-1])
    gw = np.empty_like(wr)
    gp = np.zeros(xp.shape, dtype=grad.dtype) if need_input else None
    for i in range(k):
        for j in range(k):
            window = xp[:, i:i + h, j:j + w, :]
            gw[:, i, j, :] = window.reshape(-1, c).T @ g2
            if need_input:
                gp[:, i:i + h, j:j + w, :] += grad @ wr[:, i, j, :].T
    gx = _unpad(gp, k // 2) if need_input else None
    return gx, gw.reshape(weight.shape), g2.sum(axis=0)


def _silu(z):
    s = expit(z)
    return z * s, s


def _silu_grad(z, s):
    return s * (1.0 + z * (1.0 - s))


def _pool(x):
    b, h, w, c = x.shape
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _pool_grad(g):
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25


def _up(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _up_grad(g):
    b, h, w, c = g.shape
    return g.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class ConvDenoiser(Denoiser):
    """``D = c_skip x_t + c_out F([c_in x_t, y, m, c_noise])``.

    F: conv(4->w1) silu, avgpool, conv(w1->w2) silu, upsample,
    conv(w2->w1) + skip silu, conv(w1->1).
    """

    family = "conv"

    def __init__(self, grid: GridSpec, widths=(16, 32), kernel: int = 3, data_scale: float = 1.0,
                 params=None, dtype=np.float64, precond: str = "edm"):
        if grid.n_x % 2 or grid.n_z % 2:
            raise ConfigError("conv denoiser needs even grid dimensions")
        if kernel % 2 == 0 or kernel // 2 >= min(grid.n_x, grid.n_z) // 2:
            raise ConfigError(f"kernel size {kernel} incompatible with grid {grid.n_x}x{grid.n_z}")
        self.grid = grid
        self.widths = tuple(int(v) for v in widths)
        self.kernel = int(kernel)
        self.data_scale = float(data_scale)
        self.dtype = np.dtype(dtype)
        if precond not in PRECONDITIONING:
            raise ConfigError(f"preconditioning must be one of {PRECONDITIONING}")
        self.precond = precond
        w1, w2 = self.widths
        kk = self.kernel * self.kernel
        self.shapes = [
            (IN_CHANNELS * kk, w1), (w1,),
            (w1 * kk, w2), (w2,),
            (w2 * kk, w1), (w1,),
            (w1 * kk, 1), (1,),
        ]
        size = sum(int(np.prod(s)) for s in self.shapes)
        self.params = np.zeros(size) if params is None else np.asarray(params, dtype=np.float64).copy()
        if self.params.shape != (size,):
            raise ShapeError(f"conv denoiser expects {size} parameters, got {self.params.shape}")

    def descriptor(self):
        return {"family": self.family, "n_x": self.grid.n_x, "n_z": self.grid.n_z,
                "widths": list(self.widths), "kernel": self.kernel, "precision": self.dtype.name,
                "precond": self.precond}

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        parts = []
        for idx, shape in enumerate(self.shapes):
            if len(shape) == 1:
                parts.append(np.zeros(shape))
                continue
            scale = np.sqrt(2.0 / shape[0])
            if idx == len(self.shapes) - 2:
                scale *= 0.1
            parts.append(scale * rng.standard_normal(shape))
        self.params = np.concatenate([p.ravel() for p in parts])
        return self

    def unpack(self, params=None):
        p = self.params if params is None else params
        out, at = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(p[at:at + size].reshape(shape))
            at += size
        return out

    def forward(self, x_t, y, m, sigma):
        x_t, y, m, sigma = as_batch(x_t, y, m, sigma)
        bsz = x_t.shape[0]
        nx, nz = self.grid.shape
        k = self.kernel
        c_skip, c_out, c_in, c_noise = preconditioning(sigma, m, self.data_scale, self.precond)
        dt = self.dtype
        inp = np.stack([
            (c_in * x_t).reshape(bsz, nx, nz),
            y.reshape(bsz, nx, nz),
            m.reshape(bsz, nx, nz),
            np.broadcast_to(c_noise[:, None, None], (bsz, nx, nz)),
        ], axis=-1).astype(dt)
        w1, b1, w2, b2, w3, b3, w4, b4 = [a.astype(dt) for a in self.unpack()]

        z1, xp1 = conv_forward(inp, w1, b1, k)
        h1, s1 = _silu(z1)
        p1 = _pool(h1)
        z2, xp2 = conv_forward(p1, w2, b2, k)
        h2, s2 = _silu(z2)
        u = _up(h2)
        z3, xp3 = conv_forward(u, w3, b3, k)
        z3 = z3 + h1
        h3, s3 = _silu(z3)
        f, xp4 = conv_forward(h3, w4, b4, k)
        for layer, act in enumerate((h1, h2, h3, f)):
            if not np.all(np.isfinite(act)):
                raise NumericalError(f"non-finite activation in conv layer {layer}")
        f = f.reshape(bsz, -1).astype(np.float64)
        out = c_skip * x_t + c_out * f
        cache = (inp.shape, p1.shape, u.shape, h3.shape, xp1, xp2, xp3, xp4,
                 z1, s1, z2, s2, z3, s3, c_out)
        return out, cache

    def backward(self, cache, grad_out):
        (inp_shape, p1_shape, u_shape, h3_shape, xp1, xp2, xp3, xp4,
         z1, s1, z2, s2, z3, s3, c_out) = cache
        k = self.kernel
        dt = self.dtype
        bsz = grad_out.shape[0]
        nx, nz = self.grid.shape
        w1, _, w2, _, w3, _, w4, _ = [a.astype(dt) for a in self.unpack()]
        gf = (np.asarray(grad_out) * c_out).reshape(bsz, nx, nz, 1).astype(dt)
        gh3, gw4, gb4 = conv_backward(gf, xp4, w4, h3_shape, k)
        gz3 = gh3 * _silu_grad(z3, s3)
        gu, gw3, gb3 = conv_backward(gz3, xp3, w3, u_shape, k)
        gh2 = _up_grad(gu)
        gz2 = gh2 * _silu_grad(z2, s2)
        gp1, gw2, gb2 = conv_backward(gz2, xp2, w2, p1_shape, k)
        gh1 = _pool_grad(gp1) + gz3
        gz1 = gh1 * _silu_grad(z1, s1)
        # input gradient is not needed: inputs are data, not parameters
        _, gw1, gb1 = conv_backward(gz1, xp1, w1, inp_shape, k, need_input=False)
        return np.concatenate([a.ravel().astype(np.float64) for a in (gw1, gb1, gw2, gb2, gw3, gb3, gw4, gb4)])


def conv_denoise(params, grid, x_t, y, m, sigma, **kw):
    return ConvDenoiser(grid, params=params, **kw)(x_t, y, m, sigma)


def conv_grad(params, grid, x_t, y, m, sigma, residual, **kw):
    """Gradient of ``0.5 * |residual|^2`` where ``residual = D(...) - target``."""
    den = ConvDenoiser(grid, params=params, **kw)
    _, cache = den.forward(x_t, y, m, sigma)
    return den.backward(cache, residual)
