"""Closed-form denoisers for a Gaussian prior with an optional linear-Gaussian image likelihood."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import ConfigError, NumericalError
from ..evaluation import analytic_posterior, _gain
from ..prior import GaussianPrior
from .base import Denoiser, as_batch


@dataclass
class GaussianOracleSpec:
    prior: GaussianPrior
    imaging: np.ndarray | None = None
    noise_std: float | None = None
    y_offset: np.ndarray | float = 0.0

    @property
    def conditional(self) -> bool:
        return self.imaging is not None

    @cached_property
    def _posterior_parts(self):
        """Gain K and covariance with E[x | y] = mu + K (y - y_offset - M mu)."""
        if not self.conditional:
            return None, self.prior.covariance
        gain, cov = _gain(self.prior.covariance, self.imaging, self.noise_std)
        return gain, cov

    def posterior_mean(self, y) -> np.ndarray:
        """E[x | y] for each row of ``y`` (prior mean when unconditional)."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        mu = self.prior.mean
        gain, _ = self._posterior_parts
        if gain is None:
            return np.broadcast_to(mu, y.shape).copy()
        resid = y - self.y_offset - self.imaging @ mu
        return mu + resid @ gain.T

    @property
    def covariance(self) -> np.ndarray:
        return self._posterior_parts[1]

    @cached_property
    def _eig(self):
        lam, vec = np.linalg.eigh(self.covariance)
        return np.clip(lam, 0.0, None), vec

    def posterior(self, y):
        return analytic_posterior(self.prior, self.imaging, self.noise_std, np.asarray(y) - self.y_offset)


class GaussianOracle(Denoiser):
    """Exact posterior-mean denoiser.

    ``mode="full"`` conditions on the whole noisy field (the diffusion
    denoiser). ``mode="masked"`` conditions only on cells where the mask
    channel is 1, treating the rest as pure noise; this is the minimiser of the
    masked training objectives.
    """

    family = "oracle"

    def __init__(self, spec: GaussianOracleSpec, mode: str = "full"):
        if mode not in ("full", "masked"):
            raise ConfigError(f"unknown oracle mode {mode!r}")
        self.spec = spec
        self.mode = mode
        self.params = np.zeros(0)

    def forward(self, x_t, y, m, sigma):
        x_t, y, m, sigma = as_batch(x_t, y, m, sigma)
        mu = self.spec.posterior_mean(y)
        if self.mode == "full":
            lam, vec = self.spec._eig
            coef = (x_t - mu) @ vec
            shrink = lam[None, :] / (lam[None, :] + sigma[:, None] ** 2)
            return mu + (coef * shrink) @ vec.T, None
        cov = self.spec.covariance
        out = mu.copy()
        for b in range(x_t.shape[0]):
            s = m[b] > 0.5
            if not s.any():
                continue
            inner = cov[np.ix_(s, s)] + sigma[b] ** 2 * np.eye(int(s.sum()))
            try:
                sol = np.linalg.solve(inner, x_t[b, s] - mu[b, s])
            except np.linalg.LinAlgError:
                raise NumericalError("singular solve in masked oracle") from None
            out[b] += cov[:, s] @ sol
        return out, None

    def descriptor(self):
        return {"family": "oracle", "mode": self.mode, "conditional": self.spec.conditional}


def oracle_denoise(spec: GaussianOracleSpec, x_t, y, m, sigma, mode="full"):
    return GaussianOracle(spec, mode)(x_t, y, m, sigma)
