"""Run configuration: INI-style sectioned files with strict key checking.

Every key has a documented default; unknown sections or keys are rejected by
name. Environment variables of the form BRIDGEDIFF_<SECTION>_<KEY> override
file values. The fully resolved config can be echoed back to disk and
round-trips to identical behavior.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

ENV_PREFIX = "BRIDGEDIFF"


@dataclass
class LanguageSection:
    preset: str = "lm-base"
    arch: str = "encoder_only"
    seed: int = 0


@dataclass
class VisionSection:
    preset: str = "unet-base"
    seed: int = 0


@dataclass
class BridgeSection:
    rank: int = 4
    alpha: float = 0.0        # 0 -> defaults to rank
    adapter_hidden: int = 0   # 0 -> max(d_L, d_V)
    adapter_kind: str = "feedforward"  # "feedforward" | "linear" (ablation)
    use_lora: bool = True              # False -> adapter-only ablation
    seed: int = 0


@dataclass
class ScheduleSection:
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class TrainSection:
    steps: int = 20000
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    snapshot_every: int = 0   # 0 -> snapshot only at the final step
    resolution: int = 32
    p_uncond: float = 0.1


@dataclass
class SampleSection:
    num_inference_steps: int = 50
    cfg_scale: float = 7.5
    eta: float = 0.0
    seed: int = 0


@dataclass
class EvalSection:
    frechet_eps: float = 1e-6
    reference_count: int = 256
    reference_seed: int = 0


@dataclass
class OutputSection:
    dir: str = "runs/default"


@dataclass
class RunConfig:
    language: LanguageSection = field(default_factory=LanguageSection)
    vision: VisionSection = field(default_factory=VisionSection)
    bridge: BridgeSection = field(default_factory=BridgeSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    sample: SampleSection = field(default_factory=SampleSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "RunConfig":
        t = self.train
        if min(t.steps, t.batch_size, t.resolution) <= 0:
            raise ConfigError("train steps/batch_size/resolution must be positive")
        if t.learning_rate <= 0 or t.weight_decay < 0:
            raise ConfigError("train learning_rate must be > 0, weight_decay >= 0")
        if not 0.0 <= t.p_uncond <= 1.0:
            raise ConfigError("train p_uncond must lie in [0, 1]")
        if t.snapshot_every and t.steps % t.snapshot_every != 0:
            raise ConfigError(
                f"snapshot_every={t.snapshot_every} must divide steps={t.steps}"
            )
        if self.bridge.rank < 1:
            raise ConfigError("bridge rank must be >= 1")
        if self.bridge.adapter_kind not in ("feedforward", "linear"):
            raise ConfigError("bridge adapter_kind must be feedforward or linear")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kwargs = {}
        for f in fields(cls):
            section = d.get(f.name, {})
            kwargs[f.name] = f.default_factory(**section) if isinstance(section, dict) \
                else section
        return cls(**kwargs).validate()


def _coerce(section: str, key: str, raw: str, target_type):
    try:
        if target_type is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as {target_type.__name__}"
        ) from exc


def load_config(path=None, env=None) -> RunConfig:
    """Parse an INI config, apply env overrides, return validated RunConfig."""
    cfg = RunConfig()
    section_map = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in section_map:
                raise ConfigError(f"unknown config section [{section}]")
            target = section_map[section]
            known = {f.name: f.type for f in fields(target)}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                current = getattr(target, key)
                setattr(target, key, _coerce(section, key, raw, type(current)))
    env = os.environ if env is None else env
    for section_name, target in section_map.items():
        for f in fields(target):
            var = f"{ENV_PREFIX}_{section_name.upper()}_{f.name.upper()}"
            if var in env:
                current = getattr(target, f.name)
                setattr(target, f.name, _coerce(section_name, f.name, env[var],
                                                type(current)))
    return cfg.validate()


def write_config(cfg: RunConfig, path) -> None:
    """Echo the fully resolved config as INI (round-trips via load_config)."""
    lines = []
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        for sf in fields(section):
            lines.append(f"{sf.name} = {getattr(section, sf.name)}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
