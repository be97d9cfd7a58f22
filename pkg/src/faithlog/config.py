"""Flat ``key = value`` experiment configs and run ids."""

from __future__ import annotations

import hashlib
from dataclasses import replace

from faithlog.errors import ConfigError
from faithlog.losses import LossWeights
from faithlog.model import ModelConfig
from faithlog.training import TrainConfig

CONFIG_KEYS = (
    "epochs", "batch_size", "learning_rate", "lambda1", "lambda2", "lambda3", "lambda4",
    "seed", "d_model", "n_heads", "n_layers", "negative_pathway",
)

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config_text(text: str) -> dict:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"config line {line_no}: expected 'key = value', got {raw!r}")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"config line {line_no}: duplicate key {key!r}")
        values[key] = value
    return values


def _convert(key, value):
    try:
        if key == "negative_pathway":
            return _BOOL[value.lower()]
        if key in ("learning_rate", "lambda1", "lambda2", "lambda3", "lambda4"):
            return float(value)
        return int(value)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def config_from_dict(values: dict, base: TrainConfig = None) -> TrainConfig:
    base = base or TrainConfig()
    v = {k: _convert(k, str(x)) for k, x in values.items()}
    unknown = set(v) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    w = base.weights
    weights = LossWeights(v.get("lambda1", w.ce), v.get("lambda2", w.rank),
                          v.get("lambda3", w.kl), v.get("lambda4", w.consistency))
    seed = v.get("seed", base.seed)
    model = ModelConfig(
        d_model=v.get("d_model", base.model.d_model),
        n_heads=v.get("n_heads", base.model.n_heads),
        n_layers=v.get("n_layers", base.model.n_layers),
        hidden=base.model.hidden,
        negative_pathway=v.get("negative_pathway", base.model.negative_pathway),
        seed=seed,
    )
    return TrainConfig(
        epochs=v.get("epochs", base.epochs),
        batch_size=v.get("batch_size", base.batch_size),
        learning_rate=v.get("learning_rate", base.learning_rate),
        weights=weights,
        seed=seed,
        model=model,
    )


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(parse_config_text(fh.read()))


def config_to_dict(config: TrainConfig) -> dict:
    return {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "lambda1": config.weights.ce,
        "lambda2": config.weights.rank,
        "lambda3": config.weights.kl,
        "lambda4": config.weights.consistency,
        "seed": config.seed,
        "d_model": config.model.d_model,
        "n_heads": config.model.n_heads,
        "n_layers": config.model.n_layers,
        "negative_pathway": config.model.negative_pathway,
    }


def format_config(config: TrainConfig) -> str:
    lines = []
    for k, v in config_to_dict(config).items():
        if isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def run_id(config_text: str, seed: int) -> str:
    """Short content hash of a config and seed."""
    h = hashlib.sha256()
    h.update(config_text.encode("utf-8"))
    h.update(b"\x00seed=" + str(int(seed)).encode())
    return h.hexdigest()[:12]


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed, model=replace(config.model, seed=seed))
