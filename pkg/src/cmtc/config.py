"""Run configuration: presets, JSON files and flag overrides, validated up front."""
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from .events import SynthConfig
from .reid.model import ABLATIONS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channels: Tuple[int, ...] = (16, 32, 64)
    eventnet_channels: Tuple[int, ...] = (16, 32, 64)
    slope: float = 0.1
    scaled_attention: bool = False
    per_channel_weight: bool = False
    renormalize: bool = False
    oriented_query: bool = True


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr: float = 3e-4
    decay_factor: float = 0.1
    decay_every: int = 20
    batch_p: int = 4
    batch_k: int = 4
    margin: float = 0.3
    weight_decay: float = 0.0
    eventnet_epochs: int = 20
    eventnet_lr: float = 1.5e-3
    eventnet_batch: int = 4
    lambda_p: float = 0.1
    lambda_aux: float = 1.0
    eventnet_mode: str = "joint"   # or "frozen"
    c_max: int = 5
    dtype: str = "float32"
    keep_checkpoints: int = 2


@dataclass(frozen=True)
class RunConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: str = "full"
    seed: int = 0
    seeds: int = 3   # seeds used by the ablation matrix

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base: Optional["RunConfig"] = None) -> "RunConfig":
        base = base or cls()
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for section, typ in (("data", SynthConfig), ("model", ModelConfig), ("train", TrainConfig)):
            if section in d:
                kw[section] = _merge(getattr(base, section), d[section], typ, section)
        for key in ("ablation", "seed", "seeds"):
            if key in d:
                kw[key] = d[key]
        return replace(base, **kw)

    def override(self, **values) -> "RunConfig":
        """Apply flat overrides such as ``seed=3`` or ``train.epochs=5``; None values are ignored."""
        nested = {}
        for key, value in values.items():
            if value is None:
                continue
            section, _, name = key.rpartition(".")
            if section:
                nested.setdefault(section, {})[name] = value
            else:
                nested[name] = value
        return RunConfig.from_dict(nested, base=self)

    def validate(self) -> "RunConfig":
        try:
            self.data.validate()
        except ValueError as exc:
            raise ConfigError(f"data: {exc}") from None
        d, m, t = self.data, self.model, self.train
        if d.num_ids < 4:
            raise ConfigError(f"data.num_ids must be >= 4 for a train/test identity split, got {d.num_ids}")
        factor = 2 ** len(m.channels)
        if d.height % factor or d.width % factor:
            raise ConfigError(f"data size {d.height}x{d.width} must be a multiple of {factor}")
        if len(m.eventnet_channels) and (d.height % 2 ** len(m.eventnet_channels) or d.width % 2 ** len(m.eventnet_channels)):
            raise ConfigError("data size must be divisible by the EventNet downsampling factor")
        if not 0 < m.slope < 1:
            raise ConfigError(f"model.slope must be in (0, 1), got {m.slope}")
        if min(m.channels) < 1 or min(m.eventnet_channels) < 1:
            raise ConfigError("channel counts must be positive")
        if t.epochs < 1 or t.lr <= 0 or t.decay_every < 1 or not 0 < t.decay_factor <= 1:
            raise ConfigError("train: epochs >= 1, lr > 0, decay_every >= 1 and decay_factor in (0, 1] required")
        if t.batch_p < 2 or t.batch_k < 1:
            raise ConfigError("train: batch_p >= 2 and batch_k >= 1 required")
        if t.margin < 0 or t.eventnet_epochs < 0 or t.eventnet_lr <= 0 or t.eventnet_batch < 1:
            raise ConfigError("train: margin, eventnet_epochs >= 0; eventnet_lr > 0; eventnet_batch >= 1")
        if t.lambda_p < 0 or t.lambda_aux < 0:
            raise ConfigError("train: lambda_p and lambda_aux must be non-negative")
        if t.eventnet_mode not in ("joint", "frozen"):
            raise ConfigError(f"train.eventnet_mode must be 'joint' or 'frozen', got {t.eventnet_mode!r}")
        if t.c_max < 1 or t.keep_checkpoints < 1:
            raise ConfigError("train: c_max and keep_checkpoints must be >= 1")
        if t.dtype not in ("float32", "float64"):
            raise ConfigError(f"train.dtype must be float32 or float64, got {t.dtype!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {', '.join(ABLATIONS)}")
        if self.seed < 0 or self.seeds < 1:
            raise ConfigError("seed must be >= 0 and seeds >= 1")
        return self


def _merge(current, updates: dict, typ, section: str):
    if not isinstance(updates, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    names = {f.name: f for f in fields(typ)}
    unknown = set(updates) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    clean = {}
    for key, value in updates.items():
        default = getattr(current, key)
        if isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be true or false")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        elif isinstance(default, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
            value = float(value)
        clean[key] = value
    return replace(current, **clean)


PRESETS = {
    # four identities so the split leaves two for training and two for testing
    "smoke": {"data": {"num_ids": 4, "clips_per_id_cam": 2},
              "train": {"epochs": 1, "eventnet_epochs": 1}},
    "desk": {},
    "paper": {"data": {"height": 256, "width": 128},
              "train": {"epochs": 400, "decay_every": 50, "batch_p": 8, "batch_k": 4, "eventnet_epochs": 50}},
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return RunConfig.from_dict(PRESETS[name])


def load_config(path: Optional[Path] = None, preset_name: str = "desk") -> RunConfig:
    cfg = preset(preset_name)
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = RunConfig.from_dict(raw, base=cfg)
    return cfg


def save_config(cfg: RunConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
