"""Linear-Gaussian test problems where every quantity of interest has a closed form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoisers.oracle import GaussianOracle, GaussianOracleSpec
from .diffusion import SigmaDistribution, sigma_quadrature
from .grid import GridSpec
from .imaging import ImagingParams, imaging_matrix
from .prior import GaussianPrior, build_gaussian_prior
from .training import Dataset, make_dataset


@dataclass
class LinearGaussianProblem:
    prior: GaussianPrior
    forward: np.ndarray
    noise_std: float

    @classmethod
    def with_imaging(cls, grid: GridSpec, kernel_length: float, variance: float,
                     imaging: ImagingParams, mean_profile=None) -> "LinearGaussianProblem":
        prior = build_gaussian_prior(grid, kernel_length, variance, mean_profile)
        return cls(prior, imaging_matrix(imaging, grid), imaging.noise_std)

    @property
    def grid(self) -> GridSpec:
        return self.prior.grid

    def dataset(self, n: int, n_wells: int, seed) -> Dataset:
        return make_dataset(n, self.grid, self.prior, None, n_wells, seed,
                            forward=self.forward, noise_std=self.noise_std)

    def oracle_spec(self) -> GaussianOracleSpec:
        return GaussianOracleSpec(self.prior, self.forward, self.noise_std)

    def oracle(self, mode: str = "full") -> GaussianOracle:
        return GaussianOracle(self.oracle_spec(), mode)

    def masked_variance(self, support: np.ndarray, sigma: float) -> np.ndarray:
        """Diagonal of Cov(x | y, x_S + sigma n_S) for boolean support S."""
        cov = self.oracle_spec().covariance
        if not support.any():
            return np.diag(cov).copy()
        inner = cov[np.ix_(support, support)] + sigma**2 * np.eye(int(support.sum()))
        cross = cov[:, support]
        return np.diag(cov) - np.einsum("ij,ji->i", cross, np.linalg.solve(inner, cross.T))

    def naive_floor(self, wells: np.ndarray, dist: SigmaDistribution, n_nodes: int = 32) -> float:
        """Minimum achievable naive loss over records with these well masks.

        For each record, the Bayes-optimal naive denoiser is the conditional
        mean given y and the noisy observed columns, so its expected loss is
        the mean conditional variance on the observed support. The expectation
        over log-normal sigma uses Gauss-Hermite quadrature; records are
        averaged exactly.
        """
        nz = self.grid.n_z
        cov = self.oracle_spec().covariance
        diag = np.diag(cov)
        sigmas, weights = sigma_quadrature(dist, n_nodes)
        cache = {}
        total = 0.0
        for w in np.asarray(wells, dtype=np.uint8):
            key = w.tobytes()
            if key not in cache:
                sup = np.repeat(w, nz).astype(bool)
                lam, vec = np.linalg.eigh(cov[np.ix_(sup, sup)])
                proj = (cov[:, sup] @ vec)[sup] ** 2
                per_sigma = [np.mean(diag[sup] - (proj / (lam + s * s)).sum(axis=1)) for s in sigmas]
                cache[key] = float(np.dot(weights, per_sigma))
            total += cache[key]
        return total / len(wells)
