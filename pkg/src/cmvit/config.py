"""INI run configuration: ``[model]``, ``[train]`` and ``[data]`` sections.

Canonical keys::

    [model]  every ModelConfig field (arch, image_size, patch_size, embed_dim,
             num_heads, num_blocks, mlp_ratio, cmf_channels, cmf_conv_layers,
             lbp_radius, lbp_neighbors, lbp_embed_dim, xception_middle_blocks,
             xception_width, num_classes)
    [train]  epochs_max, batch_size, patience, min_delta, lr, data_seed,
             init_seed, precision (float32 | float64)
    [data]   path, val_fraction, balance (true | false), split_seed

Unknown sections or keys are errors. Command-line ``--set section.key=value``
overrides win over the file.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .models import ModelConfig
from .train import TrainConfig

_TRAIN_TYPES = {
    "epochs_max": int, "batch_size": int, "patience": int, "min_delta": float, "lr": float,
    "data_seed": int, "init_seed": int, "precision": str,
}
_DATA_TYPES = {"path": str, "val_fraction": float, "balance": bool, "split_seed": int}
_MODEL_TYPES = {f.name: (str if f.name == "arch" else int) for f in dataclasses.fields(ModelConfig)}
SCHEMA = {"model": _MODEL_TYPES, "train": _TRAIN_TYPES, "data": _DATA_TYPES}


@dataclass
class DataConfig:
    path: str | None = None
    val_fraction: float = 0.2
    balance: bool = True
    split_seed: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    precision: str = "float32"


def _convert(section: str, key: str, raw: str):
    kind = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def _collect(values: dict[str, dict[str, str]]) -> RunConfig:
    parsed: dict[str, dict] = {s: {} for s in SCHEMA}
    for section, items in values.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in items.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            parsed[section][key] = _convert(section, key, raw)
    precision = parsed["train"].pop("precision", "float32")
    if precision not in ("float32", "float64"):
        raise ConfigError(f"precision must be float32 or float64, got {precision!r}")
    return RunConfig(
        model=ModelConfig(**parsed["model"]),
        train=TrainConfig(**parsed["train"]),
        data=DataConfig(**parsed["data"]),
        precision=precision,
    )


def load_run_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    values: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        values = {s: dict(parser.items(s)) for s in parser.sections()}
    for item in overrides or []:
        name, sep, raw = item.partition("=")
        section, dot, key = name.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        values.setdefault(section, {})[key] = raw
    return _collect(values)


def to_ini(cfg: RunConfig) -> str:
    lines = ["[model]"]
    lines += [f"{k} = {v}" for k, v in cfg.model.to_dict().items()]
    lines += ["", "[train]"]
    t = dataclasses.asdict(cfg.train)
    t.pop("checkpoint")
    lines += [f"{k} = {v}" for k, v in t.items()] + [f"precision = {cfg.precision}"]
    lines += ["", "[data]"]
    lines += [f"{k} = {v}" for k, v in dataclasses.asdict(cfg.data).items() if v is not None]
    return "\n".join(lines) + "\n"
