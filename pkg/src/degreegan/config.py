"""Run configuration: a YAML tree with a fixed schema.

Unknown keys are errors so that a typo in a sweep file cannot silently fall
back to a default.  Every error names the offending field path.

Schema (all sections and keys optional)::

    dataset: PATH            # dataset container written by ``ingest``
    out_dir: PATH
    master_seed: INT
    eval_samples: INT        # >= 1
    trials: INT              # >= 1
    vocab: {node_types: [..], edge_types: [..], max_nodes: INT}
    generator: {z_dim: INT, hidden: [INT, ..]}
    discriminator: {layers: [INT, ..], attention_hidden: INT, glimpse: INT}
    reward_net: {layers: [INT, ..], attention_hidden: INT, glimpse: INT}
    schedule: {total_epochs, pretrain_epochs, lambda_pretrain, lambda_main,
               batch_size, learning_rate, rho, momentum, gp_weight, n_critic,
               val_samples, checkpoint_every}
    objective: {target_degree: FLOAT, shape: exp | linear}
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .nets import GeneratorSpec, RgcnSpec
from .qm9 import VocabSpec
from .training import RewardObjective, TrainSchedule


class ConfigError(ValueError):
    pass


def _check_type(path: str, value: Any, kind) -> Any:
    if kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind == "str":
        ok = isinstance(value, str)
    elif kind == "ints":
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    elif kind == "strs":
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
    else:  # pragma: no cover
        raise AssertionError(kind)
    if not ok:
        raise ConfigError(f"{path}: expected {kind}, got {value!r}")
    if kind == "float":
        return float(value)
    if kind in ("ints", "strs"):
        return tuple(value)
    return value


SECTIONS = {
    "vocab": {"node_types": "strs", "edge_types": "strs", "max_nodes": "int"},
    "generator": {"z_dim": "int", "hidden": "ints"},
    "discriminator": {"layers": "ints", "attention_hidden": "int", "glimpse": "int"},
    "reward_net": {"layers": "ints", "attention_hidden": "int", "glimpse": "int"},
    "schedule": {
        "total_epochs": "int",
        "pretrain_epochs": "int",
        "lambda_pretrain": "float",
        "lambda_main": "float",
        "batch_size": "int",
        "learning_rate": "float",
        "rho": "float",
        "momentum": "float",
        "gp_weight": "float",
        "n_critic": "int",
        "val_samples": "int",
        "checkpoint_every": "int",
    },
    "objective": {"target_degree": "float", "shape": "str"},
}
TOP_LEVEL = {"dataset": "str", "out_dir": "str", "master_seed": "int", "eval_samples": "int", "trials": "int"}


@dataclass(frozen=True)
class CriticShape:
    layers: tuple[int, ...] = (64, 32)
    attention_hidden: int = 64
    glimpse: int = 128


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "data/qm9.ggan"
    out_dir: str = "runs"
    master_seed: int = 0
    eval_samples: int = 6400
    trials: int = 5
    vocab: VocabSpec | None = None
    generator: dict = field(default_factory=dict)
    discriminator: CriticShape = CriticShape()
    reward_net: CriticShape = CriticShape()
    schedule: TrainSchedule = TrainSchedule()
    objective: RewardObjective = RewardObjective()

    def __post_init__(self):
        if self.eval_samples < 1:
            raise ConfigError("eval_samples: must be at least 1")
        if self.trials < 1:
            raise ConfigError("trials: must be at least 1")

    def specs(self, vocab: VocabSpec) -> tuple[GeneratorSpec, RgcnSpec, RgcnSpec]:
        if self.vocab is not None and self.vocab != vocab:
            raise ConfigError("vocab: does not match the vocabulary stored in the dataset")
        gen = GeneratorSpec(vocab, **self.generator)
        d, r = self.discriminator, self.reward_net
        return (
            gen,
            RgcnSpec(vocab, d.layers, d.attention_hidden, d.glimpse, head="linear"),
            RgcnSpec(vocab, r.layers, r.attention_hidden, r.glimpse, head="sigmoid"),
        )

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in TOP_LEVEL}
        out["vocab"] = None if self.vocab is None else asdict(self.vocab)
        out["generator"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.generator.items()}
        out["discriminator"] = asdict(self.discriminator)
        out["reward_net"] = asdict(self.reward_net)
        sched = asdict(self.schedule)
        sched.pop("seed")
        out["schedule"] = sched
        out["objective"] = asdict(self.objective)
        return json.loads(json.dumps(out))

    def hash(self) -> str:
        """Short digest of the fully-resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def scaled(self, scale: float) -> RunConfig:
        """Shrink epochs and sample counts; pretraining stays half of the run."""
        if not 0 < scale <= 1:
            raise ConfigError(f"scale: must lie in (0, 1], got {scale}")
        if scale == 1:
            return self
        s = self.schedule
        total = max(2, round(s.total_epochs * scale))
        total += total % 2
        schedule = replace(
            s,
            total_epochs=total,
            pretrain_epochs=total // 2,
            val_samples=max(1, round(s.val_samples * scale)) if s.val_samples else 0,
        )
        return replace(self, schedule=schedule, eval_samples=max(1, round(self.eval_samples * scale)))


def _section(path: str, raw: Any, schema: dict) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(raw).__name__}")
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key")
        out[key] = _check_type(f"{path}.{key}", value, schema[key])
    return out


def _build(path: str, cls, kwargs):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(raw: Any) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a mapping")
    for key in raw:
        if key not in TOP_LEVEL and key not in SECTIONS:
            raise ConfigError(f"{key}: unknown key")
    top = {k: _check_type(k, raw[k], TOP_LEVEL[k]) for k in TOP_LEVEL if k in raw}
    parts = {name: _section(name, raw.get(name), schema) for name, schema in SECTIONS.items()}

    kwargs: dict[str, Any] = dict(top)
    if "vocab" in raw:
        kwargs["vocab"] = _build("vocab", VocabSpec, parts["vocab"])
    if parts["generator"]:
        kwargs["generator"] = parts["generator"]
        _build("generator", GeneratorSpec, parts["generator"])
    for name in ("discriminator", "reward_net"):
        shape = _build(name, CriticShape, parts[name])
        _build(name, RgcnSpec, {"layers": shape.layers, "attention_hidden": shape.attention_hidden, "glimpse": shape.glimpse})
        kwargs[name] = shape
    kwargs["schedule"] = _build("schedule", TrainSchedule, parts["schedule"])
    kwargs["objective"] = _build("objective", RewardObjective, parts["objective"])
    return _build("<root>", RunConfig, kwargs)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)

