"""Declarative run configuration shared by all CLI stages.

A single versioned JSON document; scalar fields may be overridden by CLI
flags. The seed is mandatory: every stage must be reproducible from
(config, inputs, seed).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "load_config"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration outside documented valid ranges."""


@dataclass
class RunConfig:
    seed: int
    # codec
    codec: str = "patchify"  # patchify | tiny-autoencoder
    codec_factor: int = 4
    # schedule
    diffusion_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sampler_steps: int = 50
    # model sizes
    base_width: int = 32
    prompt_dim: int = 64
    prior_width: int = 48
    prior_blocks: int = 4
    # loss hyperparameters
    sigma1: float = 4.0
    sigma2: float = 10.0
    lam: float = 2.0
    beta_pref: float = 10.0
    mu: float = 0.5
    n_levels: int = 5
    # training
    lr_prior: float = 1e-3
    lr_paldm: float = 1e-3
    lr_finetune: float = 1e-5
    batch_size: int = 8
    prior_epochs: int = 60
    paldm_steps: int = 4000
    finetune_epochs: int = 20
    # paths (relative paths resolve against the config file's directory)
    corpus_dir: str = "corpus"
    run_dir: str = "run"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.codec not in ("patchify", "tiny-autoencoder"):
            raise ConfigError(f"unknown codec {self.codec!r}")
        if self.codec_factor < 1 or self.codec_factor & (self.codec_factor - 1):
            raise ConfigError("codec_factor must be a power of two")
        if self.diffusion_steps < 2:
            raise ConfigError("diffusion_steps must be >= 2")
        if not (0 < self.beta_start < self.beta_end < 1):
            raise ConfigError("need 0 < beta_start < beta_end < 1")
        if not 1 <= self.sampler_steps <= self.diffusion_steps:
            raise ConfigError("sampler_steps must be in [1, diffusion_steps]")
        if self.n_levels < 2:
            raise ConfigError("n_levels must be >= 2")
        for name in ("sigma1", "sigma2", "lam", "beta_pref", "mu"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("lr_prior", "lr_paldm", "lr_finetune"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} out of range")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if "seed" not in data and not (overrides and "seed" in overrides):
        raise ConfigError(f"{path}: seed is mandatory")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown fields {sorted(unknown)}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e
