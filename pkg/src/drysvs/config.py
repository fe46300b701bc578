"""Pipeline configuration: INI-style sections of key=value pairs.

Every field of PipelineConfig can be set from a file or with
`section.key=value` overrides; unknown sections and keys are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .autodiff.optim import LrSchedule
from .dsp import Frontend, StftParams
from .errors import ConfigError
from .fixtures import SyntheticFixtureSpec
from .models import SeparatorConfig, SvdConfig


@dataclass(frozen=True)
class MelSettings:
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 12000.0
    sample_rate: int = 24000


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 4
    total_steps: int = 2000
    segment_seconds: float = 0.5
    seed: int = 0
    checkpoint_interval: int = 500
    detection_threshold: float = 4.0
    num_threads: int = 1


@dataclass(frozen=True)
class VocoderSettings:
    iterations: int = 32


@dataclass(frozen=True)
class PathSettings:
    manifest: str = "fixtures/manifest.tsv"
    work_dir: str = "runs/default"


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftParams = field(default_factory=StftParams)
    mel: MelSettings = field(default_factory=MelSettings)
    separator: SeparatorConfig = field(default_factory=SeparatorConfig)
    svd: SvdConfig = field(default_factory=SvdConfig)
    schedule: LrSchedule = field(default_factory=LrSchedule)
    train: TrainSettings = field(default_factory=TrainSettings)
    vocoder: VocoderSettings = field(default_factory=VocoderSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    fixtures: SyntheticFixtureSpec = field(default_factory=SyntheticFixtureSpec)

    def __post_init__(self):
        t = self.train
        if min(t.batch_size, t.total_steps, t.checkpoint_interval, t.num_threads) < 1:
            raise ConfigError("batch_size, total_steps, checkpoint_interval, num_threads must be >= 1")
        if t.segment_seconds <= 0:
            raise ConfigError("segment_seconds must be positive")
        if self.separator.n_mels != self.mel.n_mels:
            raise ConfigError(
                f"separator.n_mels={self.separator.n_mels} differs from mel.n_mels={self.mel.n_mels}")

    @property
    def frontend(self) -> Frontend:
        m = self.mel
        return Frontend(self.stft, m.n_mels, m.sample_rate, m.fmin, m.fmax)

    @property
    def work_dir(self) -> Path:
        return Path(self.paths.work_dir)

    @classmethod
    def toy(cls) -> "PipelineConfig":
        return cls()

    @classmethod
    def full(cls) -> "PipelineConfig":
        """Full training scale (1M steps, 4-block net); far beyond a desk run."""
        return cls(separator=SeparatorConfig.full(),
                   train=TrainSettings(total_steps=1_000_000, segment_seconds=3.0,
                                       checkpoint_interval=15000))


PRESETS = {"toy": PipelineConfig.toy, "full": PipelineConfig.full}


def _convert(raw: str, kind, where: str):
    kind = kind if isinstance(kind, str) else getattr(kind, "__name__", str(kind))
    kind = kind.replace(" ", "")
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw.strip()
        if kind.startswith("tuple[float"):
            parts = [float(p) for p in raw.replace(",", " ").split()]
            if len(parts) != 2:
                raise ValueError(raw)
            return tuple(parts)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None
    raise ConfigError(f"{where}: unsupported field type {kind}")


def apply_overrides(config: PipelineConfig, values: dict[str, dict[str, str]]) -> PipelineConfig:
    sections = {f.name: f for f in fields(PipelineConfig)}
    updates = {}
    for section, items in values.items():
        if section not in sections:
            raise ConfigError(f"unknown config section [{section}]")
        current = getattr(config, section)
        known = {f.name: f for f in fields(current)}
        changes = {}
        for key, raw in items.items():
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key}")
            changes[key] = _convert(raw, known[key].type, f"{section}.{key}")
        try:
            updates[section] = replace(current, **changes)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    try:
        return replace(config, **updates)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if parser.defaults():
        raise ConfigError("keys outside a section are not allowed")
    values = {s: dict(parser.items(s)) for s in parser.sections()}
    return apply_overrides(base or PipelineConfig(), values)


def load_config(path=None, overrides=(), preset: str = "toy") -> PipelineConfig:
    """Preset, then file, then `section.key=value` overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    config = PRESETS[preset]()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        config = parse_config_text(p.read_text(), config)
    values: dict[str, dict[str, str]] = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        values.setdefault(section.strip(), {})[name.strip()] = raw
    return apply_overrides(config, values) if values else config


def dump_config(config: PipelineConfig) -> str:
    lines = []
    for sec in fields(config):
        lines.append(f"[{sec.name}]")
        for key, value in dataclasses.asdict(getattr(config, sec.name)).items():
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, (tuple, list)):
                value = ", ".join(repr(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
