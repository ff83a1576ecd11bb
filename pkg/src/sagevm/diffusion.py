"""Variance-exploding diffusion: noise levels, perturbation, score, and the reverse-time sampler.

A denoiser is any callable ``D(x_t, y, m, sigma)`` taking batched arrays
``x_t, y, m`` of shape (B, N) and ``sigma`` of shape (B,), returning (B, N).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, NumericalError


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class SigmaDistribution:
    p_mean: float = -1.2
    p_std: float = 1.2

    def validate(self):
        if self.p_std < 0:
            raise ConfigError("p_std must be non-negative")


def sample_sigma(dist: SigmaDistribution, seed, size=None):
    z = _rng(seed).standard_normal(size)
    return np.exp(dist.p_mean + dist.p_std * z)


def sigma_quadrature(dist: SigmaDistribution, n_nodes: int = 32):
    """Gauss-Hermite nodes and weights for expectations over the sigma distribution."""
    z, w = np.polynomial.hermite_e.hermegauss(int(n_nodes))
    return np.exp(dist.p_mean + dist.p_std * z), w / w.sum()


def perturb(x, sigma, seed):
    """Return ``(x + sigma * n, n)`` with ``n`` standard normal."""
    if np.any(np.asarray(sigma) < 0):
        raise ConfigError("sigma must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    n = _rng(seed).standard_normal(x.shape)
    scale = np.asarray(sigma, dtype=np.float64)
    if scale.ndim:
        scale = scale[..., None]
    return x + scale * n, n


def score_from_denoiser(d_out, x_t, sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise NumericalError("score undefined at sigma = 0")
    if sigma.ndim:
        sigma = sigma[..., None]
    return (np.asarray(d_out) - np.asarray(x_t)) / sigma**2


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 64
    sigma_max: float = 80.0
    sigma_min: float = 0.002
    rho: float = 7.0
    churn: float = 0.0
    s_tmin: float = 0.0
    s_tmax: float = float("inf")
    s_noise: float = 1.0

    def validate(self):
        if int(self.n_steps) < 1:
            raise ConfigError("n_steps must be >= 1")
        if not self.sigma_min > 0 or self.sigma_max < self.sigma_min:
            raise ConfigError("need sigma_max >= sigma_min > 0")
        if self.n_steps > 1 and self.sigma_max == self.sigma_min:
            raise ConfigError("sigma_max must exceed sigma_min when n_steps > 1")
        if not self.rho > 0 or self.churn < 0:
            raise ConfigError("rho must be positive and churn non-negative")


def sigma_schedule(cfg: SamplerConfig) -> np.ndarray:
    """``n_steps`` levels from sigma_max down to sigma_min (rho spacing), then a final 0."""
    cfg.validate()
    k = cfg.n_steps
    if k == 1:
        return np.array([cfg.sigma_max, 0.0])
    inv = 1.0 / cfg.rho
    ramp = np.arange(k) / (k - 1)
    t = (cfg.sigma_max**inv + ramp * (cfg.sigma_min**inv - cfg.sigma_max**inv)) ** cfg.rho
    return np.append(t, 0.0)


def reverse_sample(denoiser, y, cfg: SamplerConfig, seed, n_samples: int = 1,
                   inference_mask=None, x_obs=None, mask_channel=None) -> np.ndarray:
    """Heun probability-flow sampler (with optional churn) over the rho schedule.

    Conditioning modes:
      * default: all-zero mask channel, nothing clamped;
      * ``inference_mask`` + ``x_obs``: observed entries re-imposed after every
        step as ``x_obs + sigma * n0`` (exactly ``x_obs`` at the end), and the
        lifted mask is fed as the mask channel;
      * ``mask_channel``: explicit (n_samples, N) channel; combined with
        ``inference_mask`` it replaces the lifted mask but clamping still applies.

    Sample k draws all its noise from ``default_rng([seed, k])``, so results do
    not depend on how samples are batched. Returns (n_samples, N).
    """
    y = np.asarray(getattr(y, "values", y), dtype=np.float64).reshape(-1)
    n = y.shape[0]
    t = sigma_schedule(cfg)
    rngs = [np.random.default_rng([int(seed), k]) for k in range(n_samples)]
    n0 = np.stack([r.standard_normal(n) for r in rngs])
    ys = np.broadcast_to(y, (n_samples, n))

    clamp = None
    if inference_mask is not None:
        if x_obs is None:
            raise ConfigError("clamped sampling needs x_obs")
        lifted = inference_mask.lift(n // inference_mask.n_x)
        clamp = lifted.astype(bool)
        obs = np.asarray(x_obs, dtype=np.float64).reshape(-1)
        m = np.broadcast_to(lifted if mask_channel is None else mask_channel, (n_samples, n))
    elif mask_channel is not None:
        m = np.broadcast_to(np.asarray(mask_channel, dtype=np.float64), (n_samples, n))
    else:
        m = np.zeros((n_samples, n))

    def impose(x, sigma):
        if clamp is not None:
            x[:, clamp] = obs[clamp] + sigma * n0[:, clamp]
        return x

    x = impose(t[0] * n0, t[0])
    k_steps = cfg.n_steps
    for i in range(k_steps):
        s_cur, s_next = t[i], t[i + 1]
        gamma = 0.0
        if cfg.churn > 0 and cfg.s_tmin <= s_cur <= cfg.s_tmax:
            gamma = min(cfg.churn / k_steps, np.sqrt(2.0) - 1.0)
        s_hat = s_cur * (1.0 + gamma)
        if gamma > 0:
            eps = np.stack([r.standard_normal(n) for r in rngs])
            x = x + np.sqrt(s_hat**2 - s_cur**2) * cfg.s_noise * eps
        d = (x - denoiser(x, ys, m, np.full(n_samples, s_hat))) / s_hat
        x_next = x + (s_next - s_hat) * d
        if s_next > 0:
            d2 = (x_next - denoiser(x_next, ys, m, np.full(n_samples, s_next))) / s_next
            x_next = x + (s_next - s_hat) * 0.5 * (d + d2)
        x = impose(x_next, s_next)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite sampler state at step {i}", step=i)
    return x
