from __future__ import annotations

import numpy as np
import pytest

from sagevm.diffusion import SamplerConfig
from sagevm.errors import ConfigError
from sagevm.grid import GridSpec
from sagevm.imaging import ImagingParams
from sagevm.inference import default_ambient_columns, posterior_samples
from sagevm.linear_gaussian import LinearGaussianProblem
from sagevm.masks import ambient_channel
from sagevm.training import Checkpoint, Normalizer

GRID = GridSpec(6, 4)
CFG = SamplerConfig(n_steps=12)


def _setup():
    prob = LinearGaussianProblem.with_imaging(GRID, 2.0, 1.0, ImagingParams(2, 1.0, 0.2))
    data = prob.dataset(1, 2, seed=0)
    ckpt = Checkpoint(prob.oracle("masked"), Normalizer.identity(GRID.n_z), meta={"keep_prob": 0.5, "mean_wells": 4})
    return prob, data, ckpt


def test_zero_mask_collapses_for_masked_oracle():
    # a denoiser that ignores unobserved inputs returns the same field for every noise draw
    _, data, ckpt = _setup()
    out = posterior_samples(ckpt, GRID, data.images[0], CFG, 8, 0, mode="zero")
    assert np.allclose(out.std(axis=0), 0.0)


def test_ambient_spreads_and_clamps():
    _, data, ckpt = _setup()
    out = posterior_samples(ckpt, GRID, data.images[0], CFG, 8, 0, data.wells[0], data.x_obs[0])
    keep = np.repeat(data.wells[0], GRID.n_z).astype(bool)
    np.testing.assert_array_equal(out[:, keep], np.tile(data.x_obs[0][keep], (8, 1)))
    assert out[:, ~keep].std(axis=0).mean() > 0.05


def test_clamp_mode_reimposes_wells():
    _, data, ckpt = _setup()
    out = posterior_samples(ckpt, GRID, data.images[0], CFG, 3, 1, data.wells[0], data.x_obs[0], mode="clamp")
    keep = np.repeat(data.wells[0], GRID.n_z).astype(bool)
    assert np.all(out[:, keep] == data.x_obs[0][keep].astype(np.float64))


def test_mode_and_input_errors():
    _, data, ckpt = _setup()
    with pytest.raises(ConfigError):
        posterior_samples(ckpt, GRID, data.images[0], CFG, 2, 0, data.wells[0])
    with pytest.raises(ConfigError):
        posterior_samples(ckpt, GRID, data.images[0], CFG, 2, 0, mode="other")


def test_ambient_channel_contains_wells():
    w = np.array([1, 0, 0, 1, 0, 0], np.uint8)
    ch = ambient_channel(w, 4, 5, 2, seed=3).reshape(5, 6, 4)
    assert np.all(ch[:, w == 1] == 1)
    assert np.all(ch[:, :, 0].sum(axis=1) == 4)
    assert np.all(ch == ch[:, :, :1])
    assert ch.tobytes() == ambient_channel(w, 4, 5, 2, seed=3).reshape(5, 6, 4).tobytes()
    assert default_ambient_columns(_setup()[2]) == 2
