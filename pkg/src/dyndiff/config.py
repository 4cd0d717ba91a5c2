"""INI-style run configuration: flat ``key = value`` pairs under named sections.

Example::

    [diffusion]
    steps = 50
    beta_min = 0.0001
    beta_max = 0.5

    [train]
    seed = 7
    unconditional = false

Every key is validated; unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from dyndiff.forecasting import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _names(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none") else int(text)


@dataclass
class ForecastSettings:
    samples: int = 100
    horizon: int = 10
    seed: int = 0


@dataclass
class DataSettings:
    targets: list = None
    split: tuple = (0.8, 0.1, 0.1)


@dataclass
class EvalSettings:
    horizons: tuple = (1, 4, 7, 10)
    stride: int = None
    max_windows: int = None
    trials: int = 1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    forecast: ForecastSettings = field(default_factory=ForecastSettings)
    data: DataSettings = field(default_factory=DataSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    latent_dim: int = None


# key -> (section object attribute, field name, parser)
KEYS = {
    "diffusion.steps": ("model", "diffusion_steps", int),
    "diffusion.beta_min": ("model", "beta_min", float),
    "diffusion.beta_max": ("model", "beta_max", float),
    "model.d_model": ("model", "d_model", int),
    "encoder.channels": ("model", "channels", int),
    "encoder.layers": ("model", "layers", int),
    "encoder.kernel": ("model", "kernel", int),
    "encoder.dilation_base": ("model", "dilation_base", int),
    "encoder.latent_dim": (None, "latent_dim", int),
    "denoiser.heads": ("model", "heads", int),
    "denoiser.res_blocks": ("model", "res_blocks", int),
    "denoiser.ff_dim": ("model", "ff_dim", int),
    "train.lr": ("train", "lr", float),
    "train.batch": ("train", "batch", int),
    "train.steps": ("train", "steps", int),
    "train.seed": ("train", "seed", int),
    "train.unconditional": ("train", "unconditional", _bool),
    "train.context": ("train", "context", int),
    "train.horizon": ("train", "horizon", int),
    "train.clip": ("train", "clip", float),
    "train.val_every": ("train", "val_every", int),
    "train.patience": ("train", "patience", int),
    "train.val_windows": ("train", "val_windows", int),
    "forecast.samples": ("forecast", "samples", int),
    "forecast.horizon": ("forecast", "horizon", int),
    "forecast.seed": ("forecast", "seed", int),
    "data.targets": ("data", "targets", _names),
    "data.split": ("data", "split", _floats),
    "eval.horizons": ("eval", "horizons", _ints),
    "eval.stride": ("eval", "stride", _opt_int),
    "eval.max_windows": ("eval", "max_windows", _opt_int),
    "eval.trials": ("eval", "trials", int),
}


def apply(cfg: RunConfig, key: str, value) -> RunConfig:
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    section, name, parse = KEYS[key]
    try:
        parsed = parse(value) if isinstance(value, str) else value
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    setattr(cfg if section is None else getattr(cfg, section), name, parsed)
    return cfg


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.latent_dim is not None and cfg.latent_dim != cfg.model.d_model:
        raise ConfigError(f"encoder.latent_dim ({cfg.latent_dim}) must equal model.d_model ({cfg.model.d_model})")
    if cfg.model.d_model % cfg.model.heads:
        raise ConfigError("model.d_model must be divisible by denoiser.heads")
    try:
        cfg.train.__post_init__()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None, overrides=None) -> RunConfig:
    """Read an INI file (optional) and apply ``section.key -> value`` overrides; overrides win."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        with open(path, encoding="utf-8") as fh:
            try:
                parser.read_file(fh)
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                apply(cfg, f"{section}.{key}", value)
    for key, value in (overrides or {}).items():
        apply(cfg, key, value)
    return validate(cfg)
