"""Column well masks ``A = diag(w kron 1_nz)`` and their random submasks.

Masks are stored as the length-n_x indicator only and applied structurally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class WellMask:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w)
        if w.ndim != 1 or not np.isin(w, (0, 1)).all():
            raise ContractError("well mask must be a 0/1 vector")
        object.__setattr__(self, "w", w.astype(np.uint8))

    @property
    def n_x(self) -> int:
        return self.w.shape[0]

    @property
    def count(self) -> int:
        return int(self.w.sum())

    def lift(self, n_z: int) -> np.ndarray:
        """Diagonal of the N x N operator, as float 0/1."""
        return np.repeat(self.w.astype(np.float64), n_z)


@dataclass(frozen=True)
class SubMask(WellMask):
    parent: WellMask = None

    def __post_init__(self):
        super().__post_init__()
        if self.parent is not None:
            if self.parent.n_x != self.n_x:
                raise ShapeError("submask and parent have different widths")
            if (self.w > self.parent.w).any():
                raise ContractError("submask selects a column its parent does not observe")


def sample_well_mask(n_x: int, n_wells: int, seed) -> WellMask:
    if not 1 <= n_wells <= n_x:
        raise ConfigError(f"n_wells must be in [1, {n_x}], got {n_wells}")
    rng = _rng(seed)
    w = np.zeros(n_x, dtype=np.uint8)
    w[rng.choice(n_x, size=n_wells, replace=False)] = 1
    return WellMask(w)


def sample_submask(mask: WellMask, keep_prob: float = 0.5, min_keep: int = 1, seed=None) -> SubMask:
    if not 0 < keep_prob <= 1:
        raise ConfigError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if min_keep > mask.count:
        raise ConfigError(f"min_keep={min_keep} exceeds the {mask.count} observed columns")
    rng = _rng(seed)
    observed = np.flatnonzero(mask.w)
    while True:
        keep = rng.random(observed.shape[0]) < keep_prob
        if keep.sum() >= min_keep:
            break
    w = np.zeros_like(mask.w)
    w[observed[keep]] = 1
    return SubMask(w, parent=mask)


def _split(x, n_x: int):
    x = np.asarray(x)
    if x.ndim == 2 and x.shape[0] == n_x:
        return x, x.shape
    flat = x.reshape(-1) if x.ndim == 1 else None
    if flat is None or flat.shape[0] % n_x:
        raise ShapeError(f"cannot split array of shape {x.shape} into {n_x} columns")
    return flat.reshape(n_x, -1), x.shape


def apply_mask(x, mask: WellMask) -> np.ndarray:
    """Copy observed columns, zero the rest. Accepts flat or (n_x, n_z) input."""
    if hasattr(x, "values") and not isinstance(x, np.ndarray):
        x = x.values
    cols, shape = _split(x, mask.n_x)
    return np.where(mask.w[:, None] == 1, cols, np.zeros((), dtype=cols.dtype)).reshape(shape)


def compose_check(mask: WellMask, sub: SubMask, x) -> bool:
    """True iff sub(mask(x)) == sub(x) exactly."""
    return bool(np.array_equal(apply_mask(apply_mask(x, mask), sub), apply_mask(x, sub)))


def pseudo_inverse_apply(mask: WellMask, x_obs) -> np.ndarray:
    """``A^+ x_obs``; for a 0/1 diagonal ``A^+ = A``."""
    cols, shape = _split(x_obs, mask.n_x)
    if np.any(cols[mask.w == 0] != 0):
        raise ContractError("x_obs has nonzero entries off the mask support")
    return apply_mask(x_obs, mask)


def ambient_channel(w, n_z: int, n_samples: int, n_extra: int, seed) -> np.ndarray:
    """Per-sample mask channels ``(n_samples, n_x * n_z)`` for ambient sampling.

    Sample k marks the observed columns ``w`` plus ``n_extra`` further columns
    drawn without replacement from the unobserved ones (stream ``[seed, k, 1]``).
    Those columns are read by the denoiser as noisy observations of the current
    sampler state, which keeps the reverse process stochastic there.
    """
    w = np.asarray(w, dtype=np.uint8).reshape(-1)
    free = np.flatnonzero(w == 0)
    take = min(int(n_extra), free.size)
    out = np.zeros((n_samples, w.size * n_z))
    for k in range(n_samples):
        cols = w.copy()
        if take:
            rng = np.random.default_rng([int(seed), k, 1])
            cols[rng.choice(free, size=take, replace=False)] = 1
        out[k] = np.repeat(cols.astype(np.float64), n_z)
    return out
