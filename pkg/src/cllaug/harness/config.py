"""Experiment configuration, loaded from JSON with command-line overrides."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..augment import DEFAULT_ROUNDS, SCHEMES

KERNELS = ("PC", "URE-GA", "URE-CE", "SCL-NL", "L-W", "FWD")
# "oracle" uses ground truth to share half of the unseen CLs; a diagnostic, not a method
CONFIG_SCHEMES = SCHEMES + ("oracle",)


@dataclass(frozen=True)
class ExperimentConfig:
    # data: {"kind": "gaussian", ...} | {"kind": "idx", ...} | {"kind": "csv", ...} | {"kind": "cache", ...}
    dataset: dict = field(default_factory=lambda: {
        "kind": "gaussian", "num_classes": 10, "dims": 8, "per_class": 500,
        "separation": 6.0, "test_per_class": 200})
    features: dict = field(default_factory=lambda: {"kind": "identity"})
    labels_per_instance: int = 1
    transition_noise: float = 0.0
    scheme: str = "none"
    num_neighbors: int = 64
    alpha: float = 0.1
    rounds: int | None = None
    gamma: float | str = "auto"
    kernel: str = "SCL-NL"
    hidden: tuple = (256,)
    optimizer: str = "adamw"
    learning_rates: tuple = (1e-3, 1e-4, 1e-5)
    weight_decays: tuple = (1e-4, 1e-5)
    momentum: float = 0.9
    schedule: str = "constant"
    warmup_epochs: int = 0
    batch_size: int = 256
    epochs: int = 100
    seeds: tuple = (0, 1, 2, 3, 4)
    validation_fraction: float = 0.1
    validation_mode: str = "ure"
    selection: str = "last"

    def __post_init__(self):
        for name in ("hidden", "learning_rates", "weight_decays", "seeds"):
            value = getattr(self, name)
            if isinstance(value, (int, float)):
                value = (value,)
            object.__setattr__(self, name, tuple(value))
        if self.scheme not in CONFIG_SCHEMES:
            raise ValueError(f"scheme must be one of {CONFIG_SCHEMES}, got {self.scheme!r}")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.selection not in ("last", "best"):
            raise ValueError(f"selection must be 'last' or 'best', got {self.selection!r}")
        if self.validation_mode not in ("ure", "ordinary"):
            raise ValueError(f"validation_mode must be 'ure' or 'ordinary', got {self.validation_mode!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.learning_rates or not self.weight_decays:
            raise ValueError("learning-rate and weight-decay grids must be non-empty")
        if self.schedule == "warmup-cosine" and self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")

    @property
    def resolved_rounds(self) -> int:
        if self.rounds is not None:
            return int(self.rounds)
        return DEFAULT_ROUNDS.get(self.scheme, 0)

    def to_dict(self) -> dict:
        # rounds stays unresolved so that a later scheme override picks its own default
        d = asdict(self)
        for name in ("hidden", "learning_rates", "weight_decays", "seeds"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]  # a manifest.json written by a previous run
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, **overrides) -> ExperimentConfig:
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides) if overrides else self


def load_config(path=None, **overrides) -> ExperimentConfig:
    config = ExperimentConfig()
    if path is not None:
        config = ExperimentConfig.from_dict(json.loads(Path(path).read_text()))
    return config.with_overrides(**overrides)


def derive_seed(seed: int, *keys: str) -> int:
    """Independent, reproducible sub-seed for one stage of one run."""
    entropy = [int(seed)] + [zlib.crc32(k.encode()) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
