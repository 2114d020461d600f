"""
Pipeline configuration: defaults < TOML file < command-line flags.

The file has one table per section, e.g.::

    [train]
    epochs = 20
    lr = 0.01

    [simulate]
    channels = 4
"""

from dataclasses import dataclass, field, fields, replace

import tomli

from .errors import ValidationError
from .features import FeatureConfig
from .masknet import TrainConfig
from .stft import StftConfig

__all__ = ["BeamformConfig", "SimulateConfig", "ModelConfig",
           "PipelineConfig", "load_config", "apply_overrides"]


@dataclass(frozen=True)
class BeamformConfig:
    delta_loading: float = 1e-6
    power_iter_tol: float = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (1024, 1024, 1024)


@dataclass(frozen=True)
class SimulateConfig:
    channels: int = 4
    spacing: float = 0.05
    speed_of_sound: float = 343.0
    gap_s: float = 0.2
    snr_db: float = 0.0
    min_separation: float = 30.0
    num_targets: int = 4
    num_interferers: int = 4
    patterns: int = 10
    mixtures: int = 500
    snr_mean: float = 3.2
    snr_std: float = 3.4
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    beamform: BeamformConfig = field(default_factory=BeamformConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)

    def __post_init__(self):
        if self.feature.base_dim > self.stft.fft_bins:
            raise ValidationError(
                f"feature base_dim {self.feature.base_dim} exceeds "
                f"{self.stft.fft_bins} STFT bins")

    @property
    def model_dims(self):
        return ((self.feature.spliced_dim,) + tuple(self.model.hidden)
                + (2 * self.feature.base_dim,))

    def geometry(self):
        from .simulator import ArrayGeometry
        geo = ArrayGeometry.linear(self.simulate.channels,
                                   self.simulate.spacing)
        geo.speed_of_sound = self.simulate.speed_of_sound
        return geo


_SECTIONS = ("stft", "feature", "model", "train", "beamform", "simulate")


def _coerce(section, name, value, current):
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(int(v) for v in value)
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValidationError(f"{section}.{name} must be an integer")
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def apply_overrides(cfg, overrides):
    """
    Arguments:
        overrides: {section: {key: value}}; None values are skipped
    """
    updated = {}
    for section, values in overrides.items():
        if section not in _SECTIONS:
            raise ValidationError(f"unknown config section [{section}]")
        sub = getattr(cfg, section)
        known = {f.name for f in fields(sub)}
        changes = {}
        for key, value in values.items():
            if value is None:
                continue
            if key not in known:
                raise ValidationError(f"unknown config key {section}.{key}")
            changes[key] = _coerce(section, key, value, getattr(sub, key))
        if changes:
            try:
                updated[section] = replace(sub, **changes)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"[{section}]: {exc}")
    return replace(cfg, **updated) if updated else cfg


def load_config(path=None, overrides=None):
    cfg = PipelineConfig()
    if path is not None:
        try:
            with open(path, "rb") as fp:
                data = tomli.load(fp)
        except tomli.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}")
        cfg = apply_overrides(cfg, data)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg
