"""Run configuration: one JSON document, defaults for every key, strict validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .student_distill import ConfigError


@dataclass
class SBMConfig:
    blocks: int = 2
    nodes_per_block: int = 250
    p_in: float = 0.1
    p_out: float = 0.01
    feature_dim: int = 32
    feature_signal: float = 0.5


@dataclass
class DatasetConfig:
    path: str | None = None
    sbm: SBMConfig = field(default_factory=SBMConfig)


@dataclass
class SplitConfig:
    label_fraction: float = 0.1
    inductive_fraction: float = 0.0


@dataclass
class TeacherSection:
    hidden_dim: int = 64
    num_layers: int = 2
    learning_rate: float = 0.01
    epochs: int = 200


@dataclass
class PositionSection:
    dim: int = 16
    walk_length: int = 30
    walks_per_node: int = 10
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025


@dataclass
class DistillSection:
    lambda_: float = 1.0
    mu: float = 0.1
    eta: float = 0.1
    epsilon: float = 0.05
    step_size: float = 0.01
    pgd_steps: int = 5
    rsd_batch: int = 256
    learning_rate: float = 0.01
    epochs: int = 200
    hidden_dim: int = 128
    num_hidden_layers: int = 2


@dataclass
class EvaluationSection:
    alphas: list = field(default_factory=lambda: [0.0, 0.5, 1.0])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    repeats: int = 50
    warmup: int = 5
    bench_nodes_per_block: int = 5000


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    positions: PositionSection = field(default_factory=PositionSection)
    distill: DistillSection = field(default_factory=DistillSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    seed: int = 0
    output: str = "runs"

    def to_json(self) -> dict:
        return _dump(self)

    def hash(self, *sections: str) -> str:
        """Short sha256 over the canonical JSON of ``sections`` (all but ``output`` by default)."""
        obj = self.to_json()
        obj.pop("output")
        if sections:
            obj = {k: obj[k] for k in sections}
        blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _key(f) -> str:
    return f.name.rstrip("_")


def _dump(obj):
    if is_dataclass(obj):
        return {_key(f): _dump(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, list):
        return [_dump(x) for x in obj]
    return obj


def _load(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a JSON object")
    obj = cls()
    by_key = {_key(f): f for f in fields(cls)}
    for k, v in data.items():
        key_path = f"{path}.{k}" if path else k
        if k not in by_key:
            raise ConfigError(key_path, "unknown key")
        f = by_key[k]
        default = getattr(obj, f.name)
        if is_dataclass(default):
            v = _load(type(default), v, key_path)
        else:
            v = _coerce(default, v, key_path, f.name == "path")
        setattr(obj, f.name, v)
    return obj


def _coerce(default, v, key_path, nullable):
    if v is None and nullable:
        return None
    if isinstance(default, bool):
        if not isinstance(v, bool):
            raise ConfigError(key_path, f"expected a boolean, got {v!r}")
        return v
    if isinstance(default, int):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(key_path, f"expected an integer, got {v!r}")
        return v
    if isinstance(default, float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(key_path, f"expected a number, got {v!r}")
        return float(v)
    if isinstance(default, list):
        if not isinstance(v, list):
            raise ConfigError(key_path, f"expected a list, got {v!r}")
        return v
    if isinstance(default, str) or default is None:
        if not isinstance(v, str):
            raise ConfigError(key_path, f"expected a string, got {v!r}")
        return v
    return v


def validate(cfg: RunConfig) -> RunConfig:
    """Range checks; raises :class:`ConfigError` naming the first offending key."""

    def need(cond, key, msg):
        if not cond:
            raise ConfigError(key, msg)

    s = cfg.dataset.sbm
    need(s.blocks >= 1, "dataset.sbm.blocks", "must be >= 1")
    need(s.nodes_per_block >= 1, "dataset.sbm.nodes_per_block", "must be >= 1")
    need(0.0 <= s.p_in <= 1.0, "dataset.sbm.p_in", "must lie in [0, 1]")
    need(0.0 <= s.p_out <= s.p_in, "dataset.sbm.p_out", "must lie in [0, p_in]")
    need(s.feature_dim >= 1, "dataset.sbm.feature_dim", "must be >= 1")
    need(0.0 <= s.feature_signal <= 1.0, "dataset.sbm.feature_signal", "must lie in [0, 1]")
    need(0.0 < cfg.split.label_fraction < 1.0, "split.label_fraction", "must lie in (0, 1)")
    need(0.0 <= cfg.split.inductive_fraction < 1.0, "split.inductive_fraction", "must lie in [0, 1)")
    t = cfg.teacher
    need(t.hidden_dim >= 1, "teacher.hidden_dim", "must be >= 1")
    need(t.num_layers >= 1, "teacher.num_layers", "must be >= 1")
    need(t.learning_rate > 0, "teacher.learning_rate", "must be > 0")
    need(t.epochs >= 0, "teacher.epochs", "must be >= 0")
    p = cfg.positions
    need(p.dim >= 0, "positions.dim", "must be >= 0 (0 disables position features)")
    need(p.walk_length >= 1, "positions.walk_length", "must be >= 1")
    need(p.walks_per_node >= 1, "positions.walks_per_node", "must be >= 1")
    need(p.window >= 1, "positions.window", "must be >= 1")
    need(p.negatives >= 0, "positions.negatives", "must be >= 0")
    need(p.epochs >= 0, "positions.epochs", "must be >= 0")
    need(p.learning_rate > 0, "positions.learning_rate", "must be > 0")
    distill_config(cfg).validate("distill")
    e = cfg.evaluation
    need(all(isinstance(a, (int, float)) and 0.0 <= a <= 1.0 for a in e.alphas),
         "evaluation.alphas", "every alpha must lie in [0, 1]")
    need(len(e.seeds) >= 1 and all(isinstance(x, int) for x in e.seeds),
         "evaluation.seeds", "must be a non-empty list of integers")
    need(e.repeats >= 10, "evaluation.repeats", "must be >= 10")
    need(e.warmup >= 0, "evaluation.warmup", "must be >= 0")
    need(e.bench_nodes_per_block >= 1, "evaluation.bench_nodes_per_block", "must be >= 1")
    return cfg


def distill_config(cfg: RunConfig, seed: int | None = None):
    from .student_distill import DistillConfig

    return DistillConfig(**asdict(cfg.distill), seed=cfg.seed if seed is None else seed)


def parse_config(data: dict) -> RunConfig:
    return validate(_load(RunConfig, data, ""))


def load_config(path) -> RunConfig:
    text = Path(path).read_text() if path else "{}"
    if not text.strip():
        raise ConfigError(str(path), "empty config file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return parse_config(data)


def apply_overrides(cfg: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Set dotted keys (``distill.eta``) on a copy of ``cfg`` and revalidate."""
    data = cfg.to_json()
    for dotted, value in overrides.items():
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(dotted, "unknown key")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(dotted, "unknown key")
        node[parts[-1]] = copy.deepcopy(value)
    return parse_config(data)
