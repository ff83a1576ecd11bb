from __future__ import annotations

import numpy as np

from ..errors import ConfigError


PRECONDITIONING = ("edm", "gated")


def preconditioning(sigma, mask, data_scale, kind="edm"):
    """Per-cell (c_skip, c_out, c_in) and per-sample c_noise.

    ``edm``: the usual variance-exploding coefficients on every cell.
    ``gated``: the same on observed cells (mask 1); unobserved cells carry pure
    noise during masked training, so there the skip and input weights are 0
    and the raw output is scaled by the data scale alone.
    """
    if kind not in PRECONDITIONING:
        raise ConfigError(f"preconditioning must be one of {PRECONDITIONING}")
    s = float(data_scale)
    sig = np.asarray(sigma, dtype=np.float64)[:, None]
    m = np.asarray(mask, dtype=np.float64)
    root = np.sqrt(s * s + sig * sig)
    c_noise = 0.25 * np.log(np.asarray(sigma, dtype=np.float64))
    if kind == "edm":
        ones = np.ones_like(m)
        return ones * (s * s / root**2), ones * (sig * s / root), ones / root, c_noise
    c_skip = m * (s * s / root**2)
    c_out = m * (sig * s / root) + (1.0 - m) * s
    c_in = m / root
    return c_skip, c_out, c_in, c_noise


class Denoiser:
    """Shared surface: ``D(x_t, y, m, sigma)`` on (B, N) arrays.

    Trainable families also expose ``forward`` returning a cache and
    ``backward(cache, grad_out)`` returning the gradient w.r.t. ``params``.
    """

    family = "base"
    params = np.zeros(0)

    @property
    def n_params(self) -> int:
        return int(self.params.shape[0])

    def __call__(self, x_t, y, m, sigma):
        return self.forward(x_t, y, m, sigma)[0]

    def forward(self, x_t, y, m, sigma):
        raise NotImplementedError

    def backward(self, cache, grad_out):
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"family": self.family}


def as_batch(x_t, y, m, sigma):
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    b, n = x_t.shape
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), (b, n))
    m = np.broadcast_to(np.asarray(m, dtype=np.float64), (b, n))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (b,))
    return x_t, y, m, sigma
