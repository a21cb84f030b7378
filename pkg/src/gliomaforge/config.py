"""Flat INI-style key=value configuration shared by the CLI subcommands.

A config file is a sequence of `key = value` lines with optional
`[section]` headers; sectioned keys flatten to `section.key`. Training
options live under `train.*`, architecture options under `model.*`, and
pipeline options (seed, quantiles, bin_width, ...) at top level. CLI flags
always take precedence over file values.
"""

import configparser
from dataclasses import fields

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig

_LIST_FIELDS = {"stage_channels", "stage_heads", "stage_strides", "stage_depths", "sr_ratios"}


def read_config(path) -> dict[str, str]:
    """Parse a key=value file into a flat string mapping."""
    with open(path) as fh:
        text = fh.read()
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case as written
    try:
        # headerless files are valid; give them an implicit top section
        parser.read_string("[top]\n" + text)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from None
    flat = {}
    for section in parser.sections():
        prefix = "" if section == "top" else f"{section}."
        for key, value in parser.items(section):
            flat[f"{prefix}{key}"] = value.strip()
    return flat


def section(mapping: dict[str, str], prefix: str) -> dict[str, str]:
    """Keys under `prefix.` with the prefix stripped."""
    start = prefix + "."
    return {k[len(start) :]: v for k, v in mapping.items() if k.startswith(start)}


def train_config_from(mapping: dict[str, str], **overrides) -> TrainConfig:
    """TrainConfig from the `train.*` keys plus keyword overrides."""
    values = section(mapping, "train")
    values.update({k: str(v) for k, v in overrides.items() if v is not None})
    return TrainConfig.from_mapping(values)


def model_config_from(mapping: dict[str, str]) -> ModelConfig:
    """ModelConfig from the `model.*` keys; list values are comma-separated."""
    values = section(mapping, "model")
    known = {f.name for f in fields(ModelConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown model config key {key!r}")
        if key in _LIST_FIELDS:
            kwargs[key] = [int(v) for v in raw.split(",")]
        else:
            kwargs[key] = int(raw)
    return ModelConfig(**kwargs)


def model_config_to_text(config: ModelConfig) -> str:
    """Serialize a ModelConfig as `model.*` key=value lines."""
    lines = []
    for f in fields(ModelConfig):
        value = getattr(config, f.name)
        if f.name in _LIST_FIELDS:
            value = ",".join(str(int(v)) for v in value)
        lines.append(f"model.{f.name} = {value}")
    return "\n".join(lines) + "\n"


def model_config_from_text(text: str) -> ModelConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string("[top]\n" + text)
    return model_config_from(dict(parser.items("top")))
