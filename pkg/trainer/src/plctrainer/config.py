"""Training configuration, loadable from a flat TOML or JSON table.

File keys match the dataclass field names one to one; unknown keys are
rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

try:
    import tomllib
except ImportError:  # stdlib tomllib appeared in 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or unreadable training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the three training phases.

    The architecture fields must agree with the codec build that will load
    the exported weights; the defaults mirror the codec's defaults. Trade-off
    weights follow the usual convention of distortion measured in 8-bit
    units against rate in bits per pixel, with the top level weighted a
    decade above the base so it targets visibly higher fidelity.
    """

    latent_channels: int = 32
    hyper_channels: int = 8
    slices: int = 4
    checkpoints: tuple[float, ...] = (0.5, 7.5, 20.0)

    lambda_base: float = 5e-3
    lambda_top: float = 5e-2

    phase1_steps: int = 200
    phase2_steps: int = 100
    phase3_steps: int = 60
    learning_rate: float = 1e-4
    plateau_patience: int = 25
    plateau_factor: float = 0.5

    batch_size: int = 8
    crop_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.latent_channels < 1 or self.hyper_channels < 1 or self.slices < 1:
            raise ConfigError(f"channel/slice counts must be >= 1: {self}")
        if self.latent_channels % self.slices:
            raise ConfigError(
                f"latent channels {self.latent_channels} not divisible "
                f"by {self.slices} slices"
            )
        # Crops must already be exact for the four stride-2 stages plus the
        # two hyper stages; the trainer never pads.
        if self.crop_size < 64 or self.crop_size % 64:
            raise ConfigError(f"crop_size must be a positive multiple of 64, got {self.crop_size}")
        cks = tuple(float(np.float32(c)) for c in self.checkpoints)
        if not cks:
            raise ConfigError("need at least one checkpoint quality")
        if any(not 0.0 < c < 100.0 for c in cks):
            raise ConfigError(f"checkpoint qualities must lie in (0, 100): {cks}")
        if any(b <= a for a, b in zip(cks, cks[1:])):
            raise ConfigError(f"checkpoint qualities must be strictly ascending: {cks}")
        object.__setattr__(self, "checkpoints", cks)
        if self.lambda_base < 0 or self.lambda_top < 0:
            raise ConfigError("trade-off weights must be non-negative")
        # Both-zero is allowed as a rate-only diagnostic objective; any other
        # configuration must weight the top level above the base.
        if (self.lambda_base, self.lambda_top) != (0.0, 0.0):
            if not self.lambda_top > self.lambda_base:
                raise ConfigError(
                    f"lambda_top ({self.lambda_top}) must exceed "
                    f"lambda_base ({self.lambda_base})"
                )
        for name in ("phase1_steps", "phase2_steps", "phase3_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 1:
            raise ConfigError(f"plateau_patience must be >= 1, got {self.plateau_patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def slice_channels(self) -> int:
        return self.latent_channels // self.slices

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        coerced = dict(values)
        if "checkpoints" in coerced:
            coerced["checkpoints"] = tuple(coerced["checkpoints"])
        try:
            return cls(**coerced)
        except TypeError as e:
            raise ConfigError(f"bad config value: {e}") from e


def load_config(path) -> TrainConfig:
    """Read a TrainConfig from a .toml or .json file."""
    lower = str(path).lower()
    if lower.endswith(".toml"):
        with open(path, "rb") as f:
            try:
                data = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"{path}: {e}") from e
    elif lower.endswith(".json"):
        with open(path, "rb") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: {e}") from e
    else:
        raise ConfigError(f"{path}: config must be a .toml or .json file")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a single flat table of settings")
    return TrainConfig.from_mapping(data)
