"""Run configuration: nested dataclasses, JSON load with unknown-key rejection, resolved echo."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field

from .autoencoder import AutoencoderConfig
from .flow import FlowNetConfig, FmLossConfig, SamplerConfig
from .frontend import FrontendConfig
from .policy import PolicyConfig
from .water import WaterSimConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup_steps: int = 100
    steps: int = 2000
    batch_size: int = 32
    weight_decay: float = 1e-6
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if not 0 <= self.warmup_steps < self.steps:
            raise ValueError("need 0 <= warmup_steps < steps")


@dataclass
class DataConfig:
    n_episodes: int = 20
    eval_trials: int = 30
    eval_seed: int = 1000
    heldout_episodes: int = 10
    # latent sequences encoded from this many block offsets per spectrogram/roll
    augment_phases: int = 4


@dataclass
class WorldModelSection:
    net: FlowNetConfig = field(default_factory=FlowNetConfig)
    loss: FmLossConfig = field(default_factory=FmLossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class AutoencoderSection:
    model: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class PolicySection:
    model: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _roll_ae() -> AutoencoderConfig:
    return AutoencoderConfig(block=8, d=32, hidden=(256,), n_features=88, domain="piano-roll", positive_weight=30.0)


def _roll_net() -> FlowNetConfig:
    return FlowNetConfig(d=32, n_context=8, n_future=8)


@dataclass
class PianoSection:
    autoencoder: AutoencoderConfig = field(default_factory=_roll_ae)
    ae_train: TrainConfig = field(default_factory=TrainConfig)
    net: FlowNetConfig = field(default_factory=_roll_net)
    loss: FmLossConfig = field(default_factory=FmLossConfig)
    wm_train: TrainConfig = field(default_factory=TrainConfig)
    max_speed: float = 6.0
    reach: float = 12.0
    lookahead: int = 16
    n_seeds: int = 20
    transpositions: tuple[int, ...] = (-6, -4, -2, 0, 2, 4, 6)
    extra_etudes: int = 12
    n_windows: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/desk"
    profile: str = "desk"
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    simulator: WaterSimConfig = field(default_factory=WaterSimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    world_model: WorldModelSection = field(default_factory=WorldModelSection)
    policy: PolicySection = field(default_factory=PolicySection)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    piano: PianoSection = field(default_factory=PianoSection)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        where = f"{path}.{key}" if path else key
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, where)
        elif typing.get_origin(hint) is tuple:
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    profile = data.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"profile: unknown profile '{profile}'")
    # overrides land on the resolved defaults, so a partial section keeps its own defaults
    merged = _merge(_merge(asdict(RunConfig()), PROFILES[profile]), data)
    return _build(RunConfig, merged, "")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return from_dict(data)


def resolved(cfg: RunConfig) -> dict:
    return asdict(cfg)


def dumps(cfg: RunConfig) -> str:
    return json.dumps(resolved(cfg), indent=2, sort_keys=True)


_REFERENCE_TRAIN = {"lr": 1.5e-4, "batch_size": 256, "steps": 3000, "warmup_steps": 500, "weight_decay": 1e-6}

# Desk profile: library defaults.  Reference profile: the published optimizer settings
# applied to every stage (not expected to finish on a laptop).
PROFILES = {
    "desk": {},
    "reference": {
        "autoencoder": {"train": _REFERENCE_TRAIN},
        "world_model": {"train": _REFERENCE_TRAIN},
        "policy": {"train": _REFERENCE_TRAIN},
        "piano": {"ae_train": _REFERENCE_TRAIN, "wm_train": _REFERENCE_TRAIN},
    },
}
