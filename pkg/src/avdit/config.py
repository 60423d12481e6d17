"""Flat ``key = value`` run configuration.

Sections map to dataclasses: ``model.*``, ``ablation.*`` (layer switches on the
model), ``schedule.*``, ``data.*``, ``train.*`` and ``seed.*``. Unknown keys are
rejected; missing keys keep their defaults, which are the desk-scale setup.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .diffusion import ConfigError
from .model import ModelConfig

ABLATION_FIELDS = ("temporal_adapter", "audio_lora", "audio_ffn_adapter", "fusion", "fusion_lora")


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sample_steps: int = 250


@dataclass(frozen=True)
class DataConfig:
    factors: int = 8
    sigma_video: float = 0.3
    sigma_audio: float = 0.3
    trajectory_scale: float = 0.5
    layout: str = "tiled"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 14000
    batch: int = 16
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    eval_every: int = 1000
    eval_samples: int = 256
    eval_timesteps: str = "100,500,900"
    checkpoint_every: int = 0

    def timesteps(self) -> list[int]:
        return [int(x) for x in self.eval_timesteps.split(",") if x.strip()]


@dataclass(frozen=True)
class SeedConfig:
    init: int = 0
    pretrain: int = 0
    data: int = 1
    timestep: int = 2
    noise: int = 3
    eval: int = 4
    sample: int = 5
    spec: int = 6


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: SeedConfig = field(default_factory=SeedConfig)

    def replace(self, **overrides) -> "RunConfig":
        """``replace(**{"train.steps": 10})`` style dotted overrides."""
        values = self.to_dict()
        for key, val in overrides.items():
            key = key.replace("__", ".")
            if key not in values:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = val
        return from_dict(values)

    def to_dict(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for f in dataclasses.fields(ModelConfig):
            section = "ablation" if f.name in ABLATION_FIELDS else "model"
            out[f"{section}.{f.name}"] = getattr(self.model, f.name)
        for section in ("schedule", "data", "train", "seed"):
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                out[f"{section}.{f.name}"] = getattr(obj, f.name)
        return out


def _field_types() -> dict[str, type]:
    types: dict[str, type] = {}
    for f in dataclasses.fields(ModelConfig):
        section = "ablation" if f.name in ABLATION_FIELDS else "model"
        types[f"{section}.{f.name}"] = _resolve(f.type)
    for section, cls in (("schedule", ScheduleConfig), ("data", DataConfig), ("train", TrainConfig),
                         ("seed", SeedConfig)):
        for f in dataclasses.fields(cls):
            types[f"{section}.{f.name}"] = _resolve(f.type)
    return types


def _resolve(t) -> type:
    return {"int": int, "float": float, "str": str, "bool": bool}.get(t, t) if isinstance(t, str) else t


def _coerce(key: str, raw: str, typ: type, lineno: int | None = None):
    where = f" (line {lineno})" if lineno is not None else ""
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}{where}: {raw!r} is not a {typ.__name__}") from None


def from_dict(values: dict[str, object]) -> RunConfig:
    types = _field_types()
    model_kw: dict[str, object] = {}
    sections: dict[str, dict[str, object]] = {"schedule": {}, "data": {}, "train": {}, "seed": {}}
    for key, val in values.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        if isinstance(val, str) and types[key] is not str:
            val = _coerce(key, val, types[key])
        section, name = key.split(".", 1)
        if section in ("model", "ablation"):
            model_kw[name] = val
        else:
            sections[section][name] = val
    return RunConfig(
        model=ModelConfig(**model_kw),
        schedule=ScheduleConfig(**sections["schedule"]),
        data=DataConfig(**sections["data"]),
        train=TrainConfig(**sections["train"]),
        seed=SeedConfig(**sections["seed"]),
    )


def parse(text: str) -> RunConfig:
    types = _field_types()
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, types[key], lineno)
    try:
        return from_dict(values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def serialize(cfg: RunConfig) -> str:
    lines = []
    current = None
    for key, val in cfg.to_dict().items():
        section = key.split(".", 1)[0]
        if section != current:
            if current is not None:
                lines.append("")
            current = section
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("avdit.presets").iterdir() if p.name.endswith(".cfg"))


def load(path_or_preset: str | Path) -> RunConfig:
    """Load a config file, or a bundled preset by name (``desk``, ``xl2-paper``, ...)."""
    path = Path(path_or_preset)
    if path.exists():
        return parse(path.read_text())
    name = str(path_or_preset)
    name = name[:-4] if name.endswith(".cfg") else name
    res = resources.files("avdit.presets") / f"{name}.cfg"
    if not res.is_file():
        raise ConfigError(f"no config file or preset named {path_or_preset!r}")
    return parse(res.read_text())
