"""Posterior evaluation: the analytic linear-Gaussian posterior, ensemble
statistics, SSIM, calibration against the analytic answer, and a probe for
denoisers that ignore their conditioning image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg
from scipy.stats import norm

from .errors import CapabilityError, ConfigError, NumericalError, ShapeError
from .prior import GaussianPrior


@dataclass
class AnalyticPosterior:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def sample(self, seed, size: int) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        lam, vec = np.linalg.eigh(self.covariance)
        root = vec * np.sqrt(np.clip(lam, 0.0, None))
        return self.mean + rng.standard_normal((size, self.mean.shape[0])) @ root.T


def _gain(cov, imaging, noise_std):
    """Kalman gain and conditional covariance for y = M x + eps, via the joint-Gaussian form."""
    if noise_std is None or not noise_std > 0:
        raise ConfigError("noise_std must be positive")
    cm = cov @ imaging.T
    innov = imaging @ cm + noise_std**2 * np.eye(imaging.shape[0])
    try:
        fac = linalg.cho_factor(innov, lower=True)
    except linalg.LinAlgError:
        raise NumericalError("innovation covariance M S M^T + s^2 I is singular") from None
    gain = linalg.cho_solve(fac, cm.T).T
    post = cov - gain @ cm.T
    return gain, 0.5 * (post + post.T)


def analytic_posterior(prior: GaussianPrior, imaging, noise_std, y) -> AnalyticPosterior:
    """Posterior of x given y = M x + eps, eps ~ N(0, noise_std^2 I)."""
    if imaging is None:
        return AnalyticPosterior(prior.mean.copy(), prior.covariance.copy())
    imaging = np.asarray(imaging, dtype=np.float64)
    y = np.asarray(getattr(y, "values", y), dtype=np.float64).reshape(-1)
    if imaging.shape != (y.shape[0], prior.grid.size):
        raise ShapeError("imaging matrix does not conform to prior and image")
    gain, cov = _gain(prior.covariance, imaging, noise_std)
    mean = prior.mean + gain @ (y - imaging @ prior.mean)
    return AnalyticPosterior(mean, cov)


def condition_on_support(post: AnalyticPosterior, support, values) -> AnalyticPosterior:
    """Condition a Gaussian on exact (noise-free) values at the boolean ``support``."""
    sup = np.asarray(support, dtype=bool).reshape(-1)
    if not sup.any():
        return AnalyticPosterior(post.mean.copy(), post.covariance.copy())
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    cov = post.covariance
    try:
        fac = linalg.cho_factor(cov[np.ix_(sup, sup)], lower=True)
    except linalg.LinAlgError:
        raise NumericalError("covariance on the observed support is singular") from None
    gain = linalg.cho_solve(fac, cov[sup, :]).T
    mean = post.mean + gain @ (values[sup] - post.mean[sup])
    out = cov - gain @ cov[sup, :]
    out = 0.5 * (out + out.T)
    mean[sup] = values[sup]
    out[sup, :] = 0.0
    out[:, sup] = 0.0
    return AnalyticPosterior(mean, out)


def posterior_stats(samples, with_std: bool = True):
    """Per-cell mean and (n-1)-normalised std of an (n, N) ensemble."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ShapeError("ensemble must be a non-empty (n, N) array")
    mean = samples.mean(axis=0)
    if not with_std:
        return mean, None
    if samples.shape[0] < 2:
        raise CapabilityError("posterior std needs at least two samples")
    return mean, samples.std(axis=0, ddof=1)


def ssim(a, b, window: int = 7, dynamic_range: float | None = None) -> float:
    """Mean SSIM over all fully-contained ``window x window`` patches (no padding).

    ``dynamic_range`` defaults to ``max(b) - min(b)``, i.e. ``b`` is the reference.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"ssim needs two 2D arrays of equal shape, got {a.shape} and {b.shape}")
    if window < 3 or window % 2 == 0:
        raise ConfigError("ssim window must be odd and >= 3")
    if min(a.shape) < window:
        raise ShapeError(f"grid {a.shape} smaller than the {window}x{window} window")
    if dynamic_range is None:
        dynamic_range = float(b.max() - b.min())
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    def local_mean(v):
        return sliding_window_view(v, (window, window)).mean(axis=(-2, -1))

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2)))


def compare_to_analytic(samples, oracle: AnalyticPosterior, level: float = 0.90) -> dict:
    """Standardised mean error, relative Frobenius covariance error and
    per-cell coverage: the oracle mass inside the ensemble's central interval
    (type-7 sample quantiles)."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    sd = oracle.std
    mean = samples.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (mean - oracle.mean) / (sd / np.sqrt(n))
    cov_err = np.nan
    if n >= 2:
        emp = np.cov(samples, rowvar=False).reshape(oracle.covariance.shape)
        cov_err = float(np.linalg.norm(emp - oracle.covariance) / np.linalg.norm(oracle.covariance))
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(samples, [tail, 1.0 - tail], axis=0, method="linear")
    with np.errstate(divide="ignore", invalid="ignore"):
        cover = norm.cdf((hi - oracle.mean) / sd) - norm.cdf((lo - oracle.mean) / sd)
    degenerate = sd == 0
    cover[degenerate] = ((lo <= oracle.mean) & (oracle.mean <= hi))[degenerate]
    return {
        "n_samples": n,
        "standardized_mean_error": z,
        "covariance_rel_frobenius": cov_err,
        "coverage": cover,
    }


@dataclass
class Probe:
    """Denoiser inputs sharing the noisy field and mask but with two different condition images."""

    x_in: np.ndarray
    mask: np.ndarray
    y_a: np.ndarray
    y_b: np.ndarray
    sigma: np.ndarray


def make_probe(x_obs, masks_lifted, images, n_probes: int, sigma: float, seed) -> Probe:
    rng = np.random.default_rng(seed)
    n = x_obs.shape[0]
    if n < 2:
        raise CapabilityError("probe needs at least two records")
    a = rng.integers(0, n, size=n_probes)
    b = (a + rng.integers(1, n, size=n_probes)) % n
    x_in = x_obs[a] + sigma * rng.standard_normal((n_probes, x_obs.shape[1]))
    return Probe(x_in, masks_lifted[a], images[a], images[b], np.full(n_probes, float(sigma)))


def trivial_solution_scores(denoiser, probe: Probe) -> np.ndarray:
    """Per-probe ``|D(y_a) - D(y_b)| / (|D(y_a)| + |D(y_b)|)``; 0 means the image is ignored.

    ``denoiser`` may also be a checkpoint, whose model is used.
    """
    denoiser = getattr(denoiser, "model", denoiser)
    da = denoiser(probe.x_in, probe.y_a, probe.mask, probe.sigma)
    db = denoiser(probe.x_in, probe.y_b, probe.mask, probe.sigma)
    num = np.linalg.norm(da - db, axis=1)
    den = np.linalg.norm(da, axis=1) + np.linalg.norm(db, axis=1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def trivial_solution_score(denoiser, probe: Probe) -> float:
    return float(trivial_solution_scores(denoiser, probe).mean())
