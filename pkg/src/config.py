"""
Flat `section.key = value` experiment configuration.

Sections map one-to-one onto dataclasses; values are coerced from the field
types. `dump_config` writes every key so that load -> dump -> load is lossless.
"""

import dataclasses
import logging
import typing
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from cvar_math import RiskSpec
from env_nav2d import EnvConfig
from tabular_oracle import TabularSpec
from trainer import TrainConfig
from utils import ConfigError, resolve_seed

logger = logging.getLogger(__name__)

ENV_KINDS = ("nav2d", "tabular")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
LAMBDA_PRESETS = {"td": 0.0, "gae": 0.97, "mc": 1.0}
_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


@dataclass
class ExperimentSection:
    env_kind: str = "nav2d"


@dataclass
class OutputConfig:
    dir: str = "results"
    log_level: str = "INFO"
    record_wall_time: bool = True


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    env: EnvConfig = field(default_factory=EnvConfig)
    tabular: TabularSpec = field(default_factory=TabularSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    risk: RiskSpec = field(default_factory=RiskSpec)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def env_kind(self) -> str:
        return self.experiment.env_kind

    def sections(self) -> Dict[str, object]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def validate(self) -> None:
        if self.env_kind not in ENV_KINDS:
            raise ConfigError(f"experiment.env_kind must be one of {ENV_KINDS}, got '{self.env_kind}'")
        if self.output.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"output.log_level must be one of {LOG_LEVELS}")
        self.env.validate()
        self.tabular.validate()
        self.train.validate()
        self.risk.validate()


def _coerce(raw: str, annotation, key: str):
    raw = raw.strip()
    try:
        if annotation is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if annotation in (int, float, str):
            return annotation(raw)
        if typing.get_origin(annotation) is tuple:
            (item_type, *_) = typing.get_args(annotation)
            return tuple(item_type(x.strip()) for x in raw.strip("()").split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse '{raw}' as {getattr(annotation, '__name__', annotation)}") from e
    raise ConfigError(f"{key}: unsupported field type {annotation}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def set_value(config: ExperimentConfig, key: str, raw: str) -> None:
    """Set `section.key` from its text form."""
    section_name, sep, name = key.partition(".")
    sections = config.sections()
    if not sep or section_name not in sections:
        raise ConfigError(f"unknown config section in '{key}' (expected one of {list(sections)})")
    section = sections[section_name]
    hints = typing.get_type_hints(type(section))
    if name not in {f.name for f in dataclasses.fields(section)}:
        raise ConfigError(f"unknown config key '{key}'")
    setattr(section, name, _coerce(raw, hints[name], key))


def parse_config_text(text: str) -> ExperimentConfig:
    config = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got '{line}'")
        set_value(config, key.strip(), value)
    config.validate()
    return config


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text)


def dump_config(config: ExperimentConfig) -> str:
    lines: List[str] = []
    for section_name, section in config.sections().items():
        for f in dataclasses.fields(section):
            lines.append(f"{section_name}.{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def save_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w") as f:
        f.write(dump_config(config))


def apply_overrides(config: ExperimentConfig, overrides: Iterable[Tuple[str, str]],
                    preset: Optional[str] = None) -> ExperimentConfig:
    """Apply `--section.key value` pairs, then the lambda preset, then TRC_SEED; revalidate."""
    for key, value in overrides:
        set_value(config, key, value)
    if preset is not None:
        if preset not in LAMBDA_PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (expected one of {list(LAMBDA_PRESETS)})")
        config.train.lam = LAMBDA_PRESETS[preset]
    config.train.seed = resolve_seed(config.train.seed)
    config.validate()
    return config


def parse_override_args(extra: List[str]) -> List[Tuple[str, str]]:
    """Turn ['--train.epochs', '5', '--risk.alpha=0.2'] into key/value pairs."""
    pairs = []
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"unrecognized argument '{token}' (overrides look like --section.key value)")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override '{token}' is missing a value")
            value = extra[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs
