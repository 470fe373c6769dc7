"""Training configuration: defaults, validation, file/env/flag layering.

Field names mirror the hyperparameter table of the experiment setup
(batch_size, learning_rate, word_dim, ...). Values are layered as
defaults < config file < environment (DOCGCN_*) < explicit overrides.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .graph import CATEGORIES

ENV_PREFIX = "DOCGCN_"


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 5e-4
    lr_decay: float = 0.75
    grad_clip: float = 10.0
    patience: int = 5
    max_epochs: int = 50
    word_dim: int = 100
    position_dim: int = 20
    gcnn_dim: int = 140
    gcnn_blocks: int = 2
    mil_dim: int = 140
    dropout_input: float = 0.1
    dropout_gcnn: float = 0.05
    dropout_mil: float = 0.05
    residual: bool = True
    top_n: int = 4
    position_clamp: int = 64
    ema_decay: float = 0.999
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    activation: str = "relu"
    rank_pool: str = "all"  # which edge types compete for top-N buckets
    coref_clique: bool = False
    mention_mode: str = "tokens"  # "tokens" | "mention-mean"
    pair_mode: str = "bidirectional"  # "bidirectional" | "undirected"
    pair_types: tuple[str, ...] | None = None  # (head type, tail type) constraint
    relations: tuple[str, ...] | None = None  # derived from the train corpus when None
    edge_categories: tuple[str, ...] = CATEGORIES
    seed: int = 1
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    merge_train_dev: bool = False
    doc_grouped_batching: bool = False
    ablation_retrain: bool = True
    input_projection: bool = False  # force the pre-block affine even when dims match
    embeddings_path: str | None = None  # optional pretrained word vectors

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("dropout_input", "dropout_gcnn", "dropout_mil", "ema_decay",
                     "adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        for name in ("batch_size", "patience", "max_epochs", "word_dim", "position_dim",
                     "gcnn_dim", "gcnn_blocks", "mil_dim", "position_clamp"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.top_n < 0:
            raise ConfigError(f"top_n must be >= 0, got {self.top_n}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"activation must be relu or tanh, got {self.activation!r}")
        if self.rank_pool not in ("all", "dep"):
            raise ConfigError(f"rank_pool must be all or dep, got {self.rank_pool!r}")
        if self.mention_mode not in ("tokens", "mention-mean"):
            raise ConfigError(f"mention_mode must be tokens or mention-mean, got {self.mention_mode!r}")
        if self.pair_mode not in ("bidirectional", "undirected"):
            raise ConfigError(f"pair_mode must be bidirectional or undirected, got {self.pair_mode!r}")
        if self.pair_types is not None and len(self.pair_types) != 2:
            raise ConfigError(f"pair_types needs exactly (head, tail), got {self.pair_types!r}")
        if self.relations is not None:
            if len(self.relations) < 2:
                raise ConfigError("relation vocabulary needs >= 2 categories")
            if self.relations[0] != "no_relation":
                raise ConfigError("relation vocabulary index 0 must be 'no_relation'")
        bad = set(self.edge_categories) - set(CATEGORIES)
        if bad or not self.edge_categories:
            raise ConfigError(f"edge_categories must be a nonempty subset of {CATEGORIES}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")

    def to_jsonable(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_jsonable(cls, payload: dict) -> "TrainConfig":
        return cls(**{k: _coerce(k, v) for k, v in payload.items()})

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


_TUPLE_FIELDS = {"pair_types", "relations", "edge_categories", "seeds"}
_OPTIONAL_FIELDS = {"pair_types", "relations", "embeddings_path"}
_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name: str, value):
    """Coerce a raw file/env/json value to the field's declared type."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    if value is None:
        if name in _OPTIONAL_FIELDS:
            return None
        raise ConfigError(f"config key {name!r} cannot be null")
    ftype = _FIELD_TYPES[name]
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
            if not value and name in _OPTIONAL_FIELDS:
                return None
        if name == "seeds":
            return tuple(int(v) for v in value)
        return tuple(str(v) for v in value)
    if isinstance(value, str):
        if ftype.startswith("bool"):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"config key {name!r}: expected a boolean, got {value!r}")
        if ftype.startswith("int"):
            try:
                return int(value)
            except ValueError as exc:
                raise ConfigError(f"config key {name!r}: expected an integer, got {value!r}") from exc
        if ftype.startswith("float"):
            try:
                return float(value)
            except ValueError as exc:
                raise ConfigError(f"config key {name!r}: expected a number, got {value!r}") from exc
        return value
    if ftype.startswith("bool") and not isinstance(value, bool):
        raise ConfigError(f"config key {name!r}: expected a boolean, got {value!r}")
    if ftype.startswith("float") and isinstance(value, (int, float)):
        return float(value)
    return value


def parse_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; keys mirror fields.

    A JSON object (e.g. the config snapshot written beside run outputs)
    is accepted too, so a run can be reproduced from its snapshot.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON config: {exc.msg}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: JSON config must be an object")
        return payload
    raw: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def env_overrides(environ=None) -> dict:
    """DOCGCN_<FIELD> variables for known config fields.

    Other DOCGCN_-prefixed variables are left alone; the prefix is shared
    with non-config switches such as DOCGCN_PURE_PYTHON.
    """
    environ = os.environ if environ is None else environ
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in _FIELD_TYPES:
                out[name] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                environ=None) -> TrainConfig:
    """Layer config sources: defaults < file < environment < overrides."""
    merged: dict = {}
    if path is not None:
        merged.update(parse_config_file(path))
    merged.update(env_overrides(environ))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {k: _coerce(k, v) for k, v in merged.items()}
    return TrainConfig(**kwargs)


def write_config_snapshot(config: TrainConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_jsonable(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_config_snapshot(path: str | Path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return TrainConfig.from_jsonable(json.load(fh))
