"""Experiment configuration: YAML tree, dotted-path overrides, validation."""
from __future__ import annotations

import dataclasses
import os
import types
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..trainkit import SYSTEMS, TrainConfig

OUTPUT_ENV = "HAITEAM_OUTPUT_DIR"


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | file | compliance-2d
    path: str | None = None
    seed: int | None = None  # generator seed; defaults to the master seed
    n: int = 2000
    d: int = 10
    l: int = 20
    label_noise: float = 0.0
    separation: float = 3.0
    expert_share: float = 0.5
    test_fraction: float = 0.3
    standardize: bool = True

    def __post_init__(self):
        if self.source not in ("synthetic", "file", "compliance-2d"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.source == "file" and not self.path:
            raise ValueError("file source needs a path")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")


@dataclass
class ExpertConfig:
    kind: str = "noise"  # noise | proxy | rule
    rho: list[float] = field(default_factory=lambda: [0.6, 0.7, 0.8])
    n_experts: int = 3
    subset_fraction: float = 0.3
    cost: Any = 0.3  # scalar or one value per expert
    proxy_hidden: int = 32
    proxy_epochs: int = 100

    def __post_init__(self):
        if self.kind not in ("noise", "proxy", "rule"):
            raise ValueError(f"unknown expert kind {self.kind!r}")
        if self.kind == "noise":
            if not self.rho:
                raise ValueError("noise experts need a rho list")
            self.n_experts = len(self.rho)
        if self.kind == "rule":
            self.n_experts = 1
        if any(not 0.0 <= r <= 1.0 for r in self.rho):
            raise ValueError("every rho must be in [0, 1]")
        if self.n_experts < 1:
            raise ValueError("need at least one expert")
        costs = [self.cost] if np.ndim(self.cost) == 0 else list(self.cost)
        if np.ndim(self.cost) and len(costs) != self.n_experts:
            raise ValueError(f"cost list has {len(costs)} entries for {self.n_experts} experts")
        if any(float(c) < 0 for c in costs):
            raise ValueError("costs must be non-negative")


@dataclass
class PropensityConfig:
    source: str = "estimated"  # estimated | logged-true
    conditioned: str = "shared"  # shared | separate
    assignment: str = "known-uniform"  # known-uniform | estimated
    floor: float = 1e-3

    def __post_init__(self):
        if self.source not in ("estimated", "logged-true"):
            raise ValueError(f"unknown propensity source {self.source!r}")
        if self.conditioned not in ("shared", "separate"):
            raise ValueError(f"unknown conditioning {self.conditioned!r}")
        if self.assignment not in ("known-uniform", "estimated"):
            raise ValueError(f"unknown assignment mode {self.assignment!r}")
        if not 0.0 < self.floor < 0.5:
            raise ValueError("floor must be in (0, 0.5)")


@dataclass
class TrainSection:
    epochs: int = 500
    batch_size: int = 64
    lr: float = 1e-3
    lambda_grid: list[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    joint_baseline: str = "ao"  # ao | grid
    joint_init: str = "best"  # fresh | ao | best: JC/JCP policy start (best = both, keep higher objective)
    window: int = 20
    tol: float = 1e-4
    truncation: float = 10.0
    hidden: int = 8
    n_hidden: int = 2
    activation: str = "identity"
    router_hidden: int = 8
    router_n_hidden: int = 2
    router_activation: str = "identity"
    restore_baseline: bool = True
    algo_weighting: str = "per_expert"
    use_behavior_in_algo: bool = True

    def __post_init__(self):
        if self.joint_baseline not in ("ao", "grid"):
            raise ValueError("joint_baseline must be 'ao' or 'grid'")
        if self.joint_init not in ("fresh", "ao", "best"):
            raise ValueError("joint_init must be 'fresh', 'ao' or 'best'")
        if not self.lambda_grid:
            raise ValueError("lambda_grid must be non-empty")
        self.to_train_config(0)  # validates the remaining fields

    def to_train_config(self, seed: int) -> TrainConfig:
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(TrainConfig) if hasattr(self, f.name)}
        kw["lambda_grid"] = tuple(float(x) for x in self.lambda_grid)
        return TrainConfig(seed=seed, **kw)


@dataclass
class Variant:
    label: str
    set: dict[str, Any] = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    repetitions: int = 10
    output_dir: str = "results"
    systems: list[str] = field(default_factory=lambda: list(SYSTEMS))
    workers: int = 1
    save_models: bool = False
    figures: bool = True
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    experts: ExpertConfig = field(default_factory=ExpertConfig)
    propensity: PropensityConfig = field(default_factory=PropensityConfig)
    train: TrainSection = field(default_factory=TrainSection)
    sweep: list[Variant] = field(default_factory=list)

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        bad = [s for s in self.systems if s not in SYSTEMS]
        if bad:
            raise ValueError(f"unknown systems {bad}; choose from {list(SYSTEMS)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def rep_seed(self, r: int) -> int:
        """Per-repetition seed: master seed XOR repetition index."""
        return int(self.seed) ^ int(r)

    def variants(self) -> list[tuple[str, "ExperimentConfig"]]:
        if not self.sweep:
            return [("base", self)]
        out = []
        for i, v in enumerate(self.sweep):
            raw = to_dict(self)
            raw["sweep"] = []
            for key, value in v.set.items():
                set_dotted(raw, key, value, f"sweep[{i}].set")
            out.append((str(v.label), from_dict(raw)))
        return out


def derive_seed(seed: int, tag: str) -> int:
    """Independent sub-seed for a named stage of one repetition."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode())])
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------------------
# dict <-> dataclass


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for name in known:
        if name not in data:
            continue
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(hints[name], data[name], sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value or {}, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return [_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict or tp is Any:
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def set_dotted(data: dict, key: str, value, where: str = "override") -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"{where}:{key}", "no such section")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"{where}:{key}", "unknown key")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError("override", f"expected key.path=value, got {text!r}")
    return key.strip(), yaml.safe_load(raw)


def load_config(path: str | Path | None = None, overrides: list[str] = (), env: dict | None = None) -> ExperimentConfig:
    """Read a YAML config, apply ``key.path=value`` overrides and the output-dir env var."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text()) or {}
    raw = to_dict(from_dict(data))
    for text in overrides:
        key, value = parse_override(text)
        set_dotted(raw, key, value)
    env = os.environ if env is None else env
    if env.get(OUTPUT_ENV):
        raw["output_dir"] = env[OUTPUT_ENV]
    return from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True, default_flow_style=False)
