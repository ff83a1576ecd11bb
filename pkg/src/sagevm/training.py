"""Datasets, the three training objectives and the optimisation loop.

Objectives (per record, normalised by the number of observed entries):

* supervised: ``|D(x + s n, y, 1, s) - x|^2`` over the full field;
* naive:      ``|A D(A x + s n, y, A, s) - A x|^2``;
* sage:       ``|A D(A~ x + s n, y, A~, s) - A x|^2`` with a fresh submask
  ``A~`` drawn from ``p(A~ | A)`` at every step.

Random streams are keyed by (seed, step, record id) so batching and record
order cannot change results.
"""
from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoisers import AffineDenoiser, ConvDenoiser, sigma_bin_edges
from .diffusion import SigmaDistribution, sigma_quadrature
from .errors import CapabilityError, ConfigError, DivergenceError
from .grid import GridSpec
from .imaging import ImagingParams, apply_imaging_operator
from .masks import WellMask, apply_mask, sample_submask, sample_well_mask
from .prior import GaussianPrior, LayeredModelParams, generate_layered_field, sample_gaussian_prior

OBJECTIVES = ("supervised", "naive", "sage")


@dataclass
class Dataset:
    """Training records. ``truth`` is the ground-truth sidecar, kept apart from the rest."""

    grid: GridSpec
    x_obs: np.ndarray
    wells: np.ndarray
    images: np.ndarray
    truth: np.ndarray | None = None

    def __len__(self):
        return self.x_obs.shape[0]

    def lifted(self, rows=None) -> np.ndarray:
        w = self.wells if rows is None else self.wells[rows]
        return np.repeat(w.astype(np.float64), self.grid.n_z, axis=1)

    def without_truth(self) -> "Dataset":
        return Dataset(self.grid, self.x_obs, self.wells, self.images, None)


def make_dataset(n: int, grid: GridSpec, prior, imaging: ImagingParams, n_wells: int, seed,
                 forward: np.ndarray | None = None, noise_std: float | None = None) -> Dataset:
    """Simulate ``n`` records: field, image, well mask and masked field.

    ``prior`` is a :class:`LayeredModelParams` or a :class:`GaussianPrior`.
    ``forward`` replaces the imaging operator by an explicit matrix (noise
    ``noise_std``), which is how toy linear-Gaussian problems are built.
    Values are stored as float32, matching the on-disk format.
    """
    if n < 0:
        raise ConfigError("record count must be non-negative")
    size = grid.size
    truth = np.zeros((n, size), dtype=np.float32)
    images = np.zeros((n, size), dtype=np.float32)
    wells = np.zeros((n, grid.n_x), dtype=np.uint8)
    for r in range(n):
        s_field, s_image, s_mask = np.random.SeedSequence([int(seed), r]).spawn(3)
        if isinstance(prior, GaussianPrior):
            x = sample_gaussian_prior(prior, np.random.default_rng(s_field)).values
        elif isinstance(prior, LayeredModelParams):
            x = generate_layered_field(prior, grid, s_field).values
        else:
            raise ConfigError(f"unsupported prior {type(prior).__name__}")
        if forward is None:
            from .grid import VelocityField
            y = apply_imaging_operator(VelocityField(grid, x), imaging, np.random.default_rng(s_image)).values
        else:
            eps = np.random.default_rng(s_image).standard_normal(size)
            y = forward @ x + (noise_std or 0.0) * eps
        truth[r] = x
        images[r] = y
        wells[r] = sample_well_mask(grid.n_x, n_wells, np.random.default_rng(s_mask)).w
    x_obs = np.where(np.repeat(wells, grid.n_z, axis=1) == 1, truth, np.float32(0))
    return Dataset(grid, x_obs, wells, images, truth)


@dataclass
class Normalizer:
    """``x_n = (x - offset[depth]) / x_scale`` and ``y_n = y / y_scale``."""

    offset: np.ndarray
    x_scale: float = 1.0
    y_scale: float = 1.0

    @classmethod
    def identity(cls, n_z: int) -> "Normalizer":
        return cls(np.zeros(n_z), 1.0, 1.0)

    @classmethod
    def fit(cls, data: Dataset) -> "Normalizer":
        """Depth trend and scale from observed well columns only; image scale from the images."""
        nz = data.grid.n_z
        obs = data.x_obs.astype(np.float64).reshape(len(data), data.grid.n_x, nz)
        w = data.wells.astype(bool)
        cols = obs[w]  # (n_observed_columns, n_z)
        if cols.shape[0] == 0:
            return cls.identity(nz)
        offset = cols.mean(axis=0)
        spread = np.abs(cols - offset).max()
        rms = np.sqrt(np.mean(data.images.astype(np.float64) ** 2))
        return cls(offset, float(spread) if spread > 0 else 1.0, float(rms) if rms > 0 else 1.0)

    def x_to(self, x, n_x: int):
        return (np.asarray(x, dtype=np.float64) - np.tile(self.offset, n_x)) / self.x_scale

    def x_from(self, xn, n_x: int):
        return np.asarray(xn, dtype=np.float64) * self.x_scale + np.tile(self.offset, n_x)

    def y_to(self, y):
        return np.asarray(y, dtype=np.float64) / self.y_scale


@dataclass
class PreparedData:
    """Normalised float64 views used by the objectives."""

    grid: GridSpec
    x_obs: np.ndarray
    wells: np.ndarray
    images: np.ndarray
    truth: np.ndarray | None

    @classmethod
    def build(cls, data: Dataset, norm: Normalizer, need_truth: bool = False):
        nx = data.grid.n_x
        lifted = data.lifted()
        x_obs = norm.x_to(data.x_obs, nx) * lifted
        truth = None
        if need_truth:
            if data.truth is None:
                raise CapabilityError("the supervised objective needs the ground-truth sidecar")
            truth = norm.x_to(data.truth, nx)
        return cls(data.grid, x_obs, data.wells.copy(), norm.y_to(data.images), truth)


def data_scale(prepared: PreparedData) -> float:
    lifted = np.repeat(prepared.wells, prepared.grid.n_z, axis=1).astype(bool)
    vals = prepared.x_obs[lifted]
    if vals.size == 0:
        return 1.0
    rms = float(np.sqrt(np.mean(vals**2)))
    return rms if rms > 0 else 1.0


def record_streams(seed, step, rid):
    base = [int(seed), int(step), int(rid)]
    return np.random.default_rng(base + [0]), np.random.default_rng(base + [1])


def objective_inputs(objective, prepared: PreparedData, rows, sigma_dist: SigmaDistribution,
                     keep_prob, min_keep, seed, step):
    """Assemble denoiser inputs, targets and loss weights for a batch of record ids."""
    nz = prepared.grid.n_z
    n = prepared.grid.size
    xs, ys, ms, sig, tgt, wts, used = [], [], [], [], [], [], []
    for rid in rows:
        rng_mask, rng_noise = record_streams(seed, step, rid)
        w = prepared.wells[rid]
        if objective == "supervised":
            sub = np.ones_like(w)
            weight = np.ones(n)
            clean = prepared.truth[rid]
            base = clean
        else:
            if w.sum() == 0:
                warnings.warn(f"record {rid} has no observed columns; skipped")
                continue
            mask = WellMask(w)
            if objective == "sage":
                if mask.count < min_keep:
                    raise ConfigError(f"record {rid} has {mask.count} wells, fewer than min_keep={min_keep}")
                sub = sample_submask(mask, keep_prob, min_keep, rng_mask).w
            else:
                sub = w
            weight = mask.lift(nz)
            clean = prepared.x_obs[rid]
            base = apply_mask(clean, WellMask(sub))
        sigma = float(np.exp(sigma_dist.p_mean + sigma_dist.p_std * rng_noise.standard_normal()))
        noise = rng_noise.standard_normal(n)
        xs.append(base + sigma * noise)
        ys.append(prepared.images[rid])
        ms.append(np.repeat(sub.astype(np.float64), nz))
        sig.append(sigma)
        tgt.append(clean)
        wts.append(weight)
        used.append(rid)
    if not used:
        return None
    return (np.array(xs), np.array(ys), np.array(ms), np.array(sig)), np.array(tgt), np.array(wts), used


def batch_loss(model, objective, prepared, rows, sigma_dist, keep_prob=0.5, min_keep=1, seed=0, step=0,
               need_grad=True):
    """Mean over records of the masked mean-squared residual, and its gradient."""
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}")
    built = objective_inputs(objective, prepared, rows, sigma_dist, keep_prob, min_keep, seed, step)
    if built is None:
        return 0.0, np.zeros(model.n_params)
    inputs, target, weight, _ = built
    out, cache = model.forward(*inputs)
    resid = weight * (out - target)
    count = weight.sum(axis=1)
    per_record = (resid**2).sum(axis=1) / count
    loss = float(per_record.mean())
    if not need_grad or model.n_params == 0:
        return loss, np.zeros(model.n_params)
    grad_out = 2.0 * resid / (count[:, None] * resid.shape[0])
    return loss, model.backward(cache, grad_out)


def quadrature_loss(model, objective, prepared, sigma_dist, keep_prob=0.5, min_keep=1, seed=0,
                    n_nodes: int = 24, n_noise: int = 1, chunk: int = 256) -> float:
    """Expected objective value: Gauss-Hermite quadrature over log sigma, every
    record, ``n_noise`` noise draws per (record, node). Lower-variance than
    averaging the stochastic training losses."""
    sigmas, weights = sigma_quadrature(sigma_dist, n_nodes)
    n = len(prepared.wells)
    nz = prepared.grid.n_z
    total = 0.0
    for node, (sigma, q) in enumerate(zip(sigmas, weights)):
        acc = 0.0
        for rep in range(n_noise):
            for lo in range(0, n, chunk):
                rows = np.arange(lo, min(n, lo + chunk))
                xs, ms, tg, wt = [], [], [], []
                for rid in rows:
                    rng = np.random.default_rng([int(seed), node, rep, int(rid)])
                    w = prepared.wells[rid]
                    if objective == "supervised":
                        sub, weight = np.ones_like(w), np.ones(prepared.grid.size)
                        clean = base = prepared.truth[rid]
                    else:
                        sub = sample_submask(WellMask(w), keep_prob, min_keep, rng).w if objective == "sage" else w
                        weight = np.repeat(w.astype(np.float64), nz)
                        clean = prepared.x_obs[rid]
                        base = apply_mask(clean, WellMask(sub))
                    xs.append(base + sigma * rng.standard_normal(prepared.grid.size))
                    ms.append(np.repeat(sub.astype(np.float64), nz))
                    tg.append(clean)
                    wt.append(weight)
                wt = np.array(wt)
                out = model(np.array(xs), prepared.images[rows], np.array(ms), np.full(len(rows), sigma))
                per_record = (((out - np.array(tg)) * wt) ** 2).sum(axis=1) / wt.sum(axis=1)
                acc += float(per_record.sum())
        total += q * acc / (n * n_noise)
    return total


def sage_loss(model, prepared, rows, sigma_dist, keep_prob=0.5, min_keep=1, seed=0, step=0):
    return batch_loss(model, "sage", prepared, rows, sigma_dist, keep_prob, min_keep, seed, step)


def naive_loss(model, prepared, rows, sigma_dist, seed=0, step=0):
    return batch_loss(model, "naive", prepared, rows, sigma_dist, seed=seed, step=step)


def supervised_loss(model, prepared, rows, sigma_dist, seed=0, step=0):
    if prepared.truth is None:
        raise CapabilityError("the supervised objective needs the ground-truth sidecar")
    return batch_loss(model, "supervised", prepared, rows, sigma_dist, seed=seed, step=step)


@dataclass
class TrainConfig:
    objective: str = "sage"
    family: str = "conv"
    sigma: SigmaDistribution = field(default_factory=SigmaDistribution)
    keep_prob: float = 0.5
    min_keep: int = 1
    batch_size: int = 8
    steps: int = 20000
    lr: float = 1e-3
    optimizer: str = "adam"
    lr_schedule: str = "constant"
    seed: int = 0
    normalize: bool = True
    widths: tuple = (16, 32)
    kernel: int = 3
    n_bins: int = 8
    precision: str = "float64"
    precond: str = "edm"

    def validate(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.family not in ("affine", "conv"):
            raise ConfigError("trainable family must be 'affine' or 'conv'")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be 'constant' or 'cosine'")
        if self.steps < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError("need steps >= 0, batch_size >= 1 and lr > 0")
        if not 0 < self.keep_prob <= 1 or self.min_keep < 0:
            raise ConfigError("keep_prob must be in (0, 1] and min_keep >= 0")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        if self.precond not in ("edm", "gated"):
            raise ConfigError("precond must be 'edm' or 'gated'")
        self.sigma.validate()

    def digest(self) -> bytes:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).digest()


@dataclass
class LossRecord:
    step: int
    loss: float
    grad_norm: float
    seconds: float


@dataclass
class Checkpoint:
    model: object
    normalizer: Normalizer
    config_hash: bytes = bytes(32)
    meta: dict = field(default_factory=dict)

    @property
    def data_scale(self) -> float:
        return float(getattr(self.model, "data_scale", 1.0))


class Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, size, lr):
        self.lr = lr

    def step(self, params, grad):
        return params - self.lr * grad


def build_model(config: TrainConfig, grid: GridSpec, scale: float = 1.0):
    if config.family == "affine":
        return AffineDenoiser(grid.size, sigma_bin_edges(config.sigma, config.n_bins))
    return ConvDenoiser(grid, config.widths, config.kernel, data_scale=scale,
                        dtype=np.dtype(config.precision), precond=config.precond).init_params(config.seed)


def train(config: TrainConfig, data: Dataset, model=None, callback=None):
    """Run the configured objective. Returns ``(Checkpoint, [LossRecord, ...])``.

    Raises DivergenceError on a non-finite loss; its ``last_good`` is a
    Checkpoint holding the parameters from before the failing step.
    """
    config.validate()
    if len(data) == 0 and config.steps > 0:
        raise ConfigError("cannot train on an empty dataset")
    norm = Normalizer.fit(data) if config.normalize else Normalizer.identity(data.grid.n_z)
    if config.objective != "supervised":
        data = data.without_truth()  # masked objectives never see the sidecar
    prepared = PreparedData.build(data, norm, need_truth=config.objective == "supervised")
    scale = data_scale(prepared)
    if model is None:
        model = build_model(config, data.grid, scale)
    opt = Adam(model.n_params, config.lr) if config.optimizer == "adam" else SGD(model.n_params, config.lr)
    meta = {
        "objective": config.objective,
        "keep_prob": config.keep_prob,
        "min_keep": config.min_keep,
        "mean_wells": float(data.wells.sum(axis=1).mean()) if len(data) else 0.0,
        "p_mean": config.sigma.p_mean,
        "p_std": config.sigma.p_std,
    }
    history = []
    start = time.perf_counter()
    for step in range(config.steps):
        pick = np.random.default_rng([config.seed, step])
        rows = pick.choice(len(data), size=min(config.batch_size, len(data)), replace=False)
        loss, grad = batch_loss(model, config.objective, prepared, rows, config.sigma,
                                config.keep_prob, config.min_keep, config.seed, step)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"non-finite loss at step {step}", step=step,
                                  last_good=Checkpoint(model, norm, config.digest(), meta))
        if config.lr_schedule == "cosine":
            opt.lr = 0.5 * config.lr * (1.0 + np.cos(np.pi * step / config.steps))
        model.params = opt.step(model.params, grad)
        rec = LossRecord(step, loss, float(np.linalg.norm(grad)), time.perf_counter() - start)
        history.append(rec)
        if callback is not None:
            callback(rec)
    return Checkpoint(model, norm, config.digest(), meta), history
