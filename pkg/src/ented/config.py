"""Run configuration: presets, JSON loading with strict validation, hashing.

A run is fully described by one RunConfig. Configs load from JSON with
unknown keys rejected (the error names the offending key path), so a typo
in a config file fails loudly instead of silently training with a default.
The config hash stored in checkpoints covers every training-relevant field;
filesystem paths are excluded so moving a run between machines does not
invalidate its checkpoints.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .degradation import DegradationSpec
from .errors import ConfigError
from .generator import NetworkConfig
from .losses import LossWeights


@dataclass(frozen=True)
class OptimizerConfig:
    lr_generator: float = 2e-3
    lr_discriminator: float = 1.882e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.lr_generator and 0 < self.lr_discriminator):
            raise ConfigError("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


@dataclass(frozen=True)
class VQScheduleConfig:
    num_codewords: int = 64
    beta: float = 0.25
    # Short warmup and frequent refits: the encoder drifts while the
    # commitment term is gated off, so the first k-means must land before
    # the latents move far from wherever the codebook was initialized.
    warmup_iters: int = 150
    reinit_period: int = 50
    kmeans_iters: int = 10
    buffer_capacity: int = 512  # rolling pool of recent latents fed to k-means

    def __post_init__(self):
        if self.num_codewords < 1:
            raise ConfigError("num_codewords must be >= 1")
        if self.warmup_iters < 0 or self.reinit_period < 0:
            raise ConfigError("vq schedule values must be nonnegative")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    out_dir: str = "runs/out"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    iterations: int = 2000
    batch_size: int = 4
    log_every: int = 1
    checkpoint_every: int = 500
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    vq: VQScheduleConfig = field(default_factory=VQScheduleConfig)
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be >= 1")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("log_every and checkpoint_every must be >= 1")


def desk_scale() -> RunConfig:
    """Small-but-complete preset: minutes on a laptop, all paths exercised."""
    return RunConfig()


def paper_scale() -> RunConfig:
    """Published training protocol. Selectable, not runnable at desk scale."""
    return RunConfig(
        iterations=400_000,
        batch_size=4,
        checkpoint_every=10_000,
        network=NetworkConfig(
            resolution=512,
            channels=(64, 128, 256, 512, 512),
            disc_channels=(64, 128, 256, 512, 512),
            latent_channels=256,
            texture_kernels=32,
        ),
        vq=VQScheduleConfig(
            num_codewords=1024,
            warmup_iters=10_000,
            reinit_period=2_000,
            buffer_capacity=4096,
        ),
    )


_PRESETS = {"desk_scale": desk_scale, "paper_scale": paper_scale}

# Sections whose dict values map onto nested dataclasses.
_SECTIONS = {
    "network": NetworkConfig,
    "loss_weights": LossWeights,
    "optimizer": OptimizerConfig,
    "vq": VQScheduleConfig,
    "degradation": DegradationSpec,
    "paths": PathsConfig,
}


def _coerce(value, target_type, path: str):
    # json gives lists; dataclass fields of tuple type expect tuples
    if isinstance(value, list):
        return tuple(value)
    if isinstance(value, bool):
        return value
    if target_type is float and isinstance(value, int):
        return float(value)
    return value


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        here = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(f"unknown config key: {here}")
        sub = _SECTIONS.get(key)
        if sub is not None and path == "":
            kwargs[key] = _build(sub, value, here)
        else:
            kwargs[key] = _coerce(value, fields[key].type, here)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a plain dict, rejecting unknown keys.

    An optional top-level "preset" key ("desk_scale" or "paper_scale")
    selects the base; remaining keys override it section by section.
    """
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    data = dict(data)
    preset_name = data.pop("preset", "desk_scale")
    if preset_name not in _PRESETS:
        raise ConfigError(
            f"unknown preset {preset_name!r}; expected one of {sorted(_PRESETS)}"
        )
    base = to_dict(_PRESETS[preset_name]())
    for key, value in data.items():
        if key in _SECTIONS and isinstance(value, dict):
            merged = dict(base[key])
            merged.update(value)
            base[key] = merged
        else:
            base[key] = value
    return _build(RunConfig, base, "")


def to_dict(cfg: RunConfig) -> dict:
    """Plain JSON-serializable dict, tuples rendered as lists."""

    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj

    return convert(cfg)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    return from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


# Excluded from the hash: where artifacts land and when the run stops or
# snapshots. None of these change the weight trajectory at a given
# iteration, so resuming to a farther stop point stays legal.
HASH_EXEMPT = ("paths", "iterations", "checkpoint_every", "log_every")


def config_hash(cfg: RunConfig) -> str:
    """sha256 over the canonical JSON form of the trajectory-relevant fields."""
    data = to_dict(cfg)
    for key in HASH_EXEMPT:
        data.pop(key, None)
    canon = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def apply_env_seed(cfg: RunConfig) -> RunConfig:
    """Honor the ENTED_SEED environment override, if set."""
    raw = os.environ.get("ENTED_SEED")
    if raw is None or raw == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError as exc:
        raise ConfigError(f"ENTED_SEED must be an integer, got {raw!r}") from exc
    return dataclasses.replace(cfg, seed=seed)
