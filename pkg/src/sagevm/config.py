"""Run configuration: ``namespace.key = value`` lines with ``#`` comments.

Every key has a default, so a parsed :class:`RunConfig` is always complete.
Unknown keys and invalid values are rejected when the text is parsed, before
any computation starts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import SamplerConfig, SigmaDistribution
from .errors import ConfigError, FormatError, SageError
from .grid import GridSpec
from .imaging import ImagingParams
from .prior import LayeredModelParams, build_gaussian_prior
from .training import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _real(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


# key -> (parser, default)
SCHEMA = {
    "grid.n_x": (int, 64),
    "grid.n_z": (int, 128),
    "grid.dx": (_real, 1.0),
    "grid.dz": (_real, 1.0),
    "data.n_records": (int, 256),
    "prior.kind": (str, "layered"),
    "prior.n_layers": (int, 8),
    "prior.v_min": (_real, 1500.0),
    "prior.v_max": (_real, 4500.0),
    "prior.depth_gradient": (_real, 2.0),
    "prior.interface_roughness": (int, 2),
    "prior.kernel_length": (_real, 3.0),
    "prior.variance": (_real, 1.0),
    "prior.mean": (_real, 0.0),
    "imaging.wavelet_halfwidth": (int, 4),
    "imaging.wavelet_center_scale": (_real, 1.5),
    "imaging.noise_std": (_real, 0.0),
    "wells.n_wells": (int, 5),
    "sigma.p_mean": (_real, -1.2),
    "sigma.p_std": (_real, 1.2),
    "train.objective": (str, "sage"),
    "train.family": (str, "conv"),
    "train.keep_prob": (_real, 0.5),
    "train.min_keep": (int, 1),
    "train.batch_size": (int, 8),
    "train.steps": (int, 20000),
    "train.lr": (_real, 1e-3),
    "train.optimizer": (str, "adam"),
    "train.lr_schedule": (str, "constant"),
    "train.normalize": (_bool, True),
    "train.widths": (_ints, (16, 32)),
    "train.kernel": (int, 3),
    "train.n_bins": (int, 8),
    "train.precision": (str, "float64"),
    "train.precond": (str, "edm"),
    "sampler.n_steps": (int, 64),
    "sampler.sigma_max": (_real, 80.0),
    "sampler.sigma_min": (_real, 0.002),
    "sampler.rho": (_real, 7.0),
    "sampler.churn": (_real, 0.0),
    "sampler.s_tmin": (_real, 0.0),
    "sampler.s_tmax": (_real, math.inf),
    "sampler.s_noise": (_real, 1.0),
    "sampler.n_samples": (int, 16),
    "sampler.mode": (str, "ambient"),
    "sampler.ambient_columns": (int, 0),
    "eval.window": (int, 7),
    "eval.level": (_real, 0.9),
}

PRIOR_KINDS = ("layered", "gaussian")
SAMPLER_MODES = ("ambient", "clamp", "zero")


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, raw: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            self.values[key] = parser(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None

    def grid(self) -> GridSpec:
        return GridSpec(self["grid.n_x"], self["grid.n_z"], self["grid.dx"], self["grid.dz"])

    def layered(self) -> LayeredModelParams:
        return LayeredModelParams(self["prior.n_layers"], self["prior.v_min"], self["prior.v_max"],
                                  self["prior.depth_gradient"], self["prior.interface_roughness"])

    def prior(self):
        """LayeredModelParams or a dense GaussianPrior, by ``prior.kind``."""
        if self["prior.kind"] == "layered":
            return self.layered()
        grid = self.grid()
        mean = [self["prior.mean"]] * grid.n_z
        return build_gaussian_prior(grid, self["prior.kernel_length"], self["prior.variance"], mean)

    def imaging(self) -> ImagingParams:
        return ImagingParams(self["imaging.wavelet_halfwidth"], self["imaging.wavelet_center_scale"],
                             self["imaging.noise_std"])

    def sigma(self) -> SigmaDistribution:
        return SigmaDistribution(self["sigma.p_mean"], self["sigma.p_std"])

    def train(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(
            objective=self["train.objective"], family=self["train.family"], sigma=self.sigma(),
            keep_prob=self["train.keep_prob"], min_keep=self["train.min_keep"],
            batch_size=self["train.batch_size"], steps=self["train.steps"], lr=self["train.lr"],
            optimizer=self["train.optimizer"], lr_schedule=self["train.lr_schedule"], seed=int(seed),
            normalize=self["train.normalize"],
            widths=tuple(self["train.widths"]), kernel=self["train.kernel"], n_bins=self["train.n_bins"],
            precision=self["train.precision"], precond=self["train.precond"],
        )

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self["sampler.n_steps"], self["sampler.sigma_max"], self["sampler.sigma_min"],
                             self["sampler.rho"], self["sampler.churn"], self["sampler.s_tmin"],
                             self["sampler.s_tmax"], self["sampler.s_noise"])

    def validate(self):
        """Check every value against the preconditions of the module that consumes it."""
        try:
            grid = self.grid()
            if self["data.n_records"] < 0:
                raise ConfigError("data.n_records must be non-negative")
            if self["prior.kind"] not in PRIOR_KINDS:
                raise ConfigError(f"prior.kind must be one of {PRIOR_KINDS}")
            self.layered().validate()
            if not self["prior.kernel_length"] > 0 or not self["prior.variance"] > 0:
                raise ConfigError("prior.kernel_length and prior.variance must be positive")
            if self["prior.kind"] == "gaussian" and grid.size > 4096:
                raise ConfigError("the dense Gaussian prior is limited to 4096 cells")
            self.imaging().validate()
            if not 1 <= self["wells.n_wells"] <= grid.n_x:
                raise ConfigError(f"wells.n_wells must be in [1, {grid.n_x}]")
            tc = self.train()
            tc.validate()
            if len(tc.widths) != 2 or min(tc.widths) < 1:
                raise ConfigError("train.widths must be two positive integers")
            if tc.n_bins < 1:
                raise ConfigError("train.n_bins must be >= 1")
            self.sampler().validate()
            if self["sampler.n_samples"] < 1:
                raise ConfigError("sampler.n_samples must be >= 1")
            if self["sampler.mode"] not in SAMPLER_MODES:
                raise ConfigError(f"sampler.mode must be one of {SAMPLER_MODES}")
            if self["sampler.ambient_columns"] < 0:
                raise ConfigError("sampler.ambient_columns must be non-negative")
            if self["eval.window"] < 3 or self["eval.window"] % 2 == 0:
                raise ConfigError("eval.window must be odd and >= 3")
            if not 0 < self["eval.level"] < 1:
                raise ConfigError("eval.level must be in (0, 1)")
        except ConfigError:
            raise
        except SageError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def dumps(self) -> str:
        lines = []
        for key, value in self.values.items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def parse_config(text: str = "", overrides=()) -> RunConfig:
    """Parse config text, then apply ``key=value`` overrides, then validate."""
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'namespace.key = value'")
        key, raw = body.split("=", 1)
        cfg.set(key.strip(), raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw)
    return cfg.validate()


def load_config(path=None, overrides=()) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)
