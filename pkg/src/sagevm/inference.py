"""Posterior ensembles from a trained checkpoint, in physical units."""
from __future__ import annotations

import numpy as np

from .diffusion import SamplerConfig, reverse_sample
from .errors import ConfigError
from .masks import WellMask, ambient_channel


def default_ambient_columns(ckpt) -> int:
    """Extra noisy-observed columns per sample: the mean training submask size, at least one."""
    meta = ckpt.meta or {}
    return max(1, int(round(meta.get("keep_prob", 0.5) * meta.get("mean_wells", 1.0))))


def posterior_samples(ckpt, grid, image, cfg: SamplerConfig, n_samples: int, seed,
                      wells=None, x_obs=None, mode: str = "ambient", n_extra: int | None = None) -> np.ndarray:
    """Draw ``(n_samples, N)`` posterior samples for one image (and optional wells).

    Modes:
      * ``zero``: all-zero mask channel, nothing clamped;
      * ``clamp``: observed columns fed as the mask channel and re-imposed;
      * ``ambient``: as ``clamp`` plus ``n_extra`` random unobserved columns per
        sample marked observed in the mask channel (not clamped).
    """
    norm = ckpt.normalizer
    nx, nz = grid.n_x, grid.n_z
    y = norm.y_to(np.asarray(image, dtype=np.float64).reshape(-1))
    w = np.zeros(nx, dtype=np.uint8) if wells is None else np.asarray(wells, dtype=np.uint8)
    has_wells = bool(w.any())
    if has_wells and x_obs is None:
        raise ConfigError("conditioning on wells needs the observed field")
    kwargs = {}
    if mode in ("clamp", "ambient") and has_wells:
        kwargs["inference_mask"] = WellMask(w)
        kwargs["x_obs"] = norm.x_to(x_obs, nx) * np.repeat(w, nz)
    if mode == "ambient":
        extra = default_ambient_columns(ckpt) if n_extra in (None, 0) else int(n_extra)
        kwargs["mask_channel"] = ambient_channel(w, nz, n_samples, extra, seed)
    elif mode not in ("clamp", "zero"):
        raise ConfigError(f"unknown sampling mode {mode!r}")
    out = reverse_sample(ckpt.model, y, cfg, seed, n_samples, **kwargs)
    samples = norm.x_from(out, nx)
    if has_wells and mode != "zero":
        keep = np.repeat(w, nz).astype(bool)
        samples[:, keep] = np.asarray(x_obs, dtype=np.float64).reshape(-1)[keep]
    return samples
