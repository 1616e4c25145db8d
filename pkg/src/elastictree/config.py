"""Run configuration shared by every command.

Values are resolved in this order, later winning: built-in defaults, the file
named by ``ELASTICTREE_CONFIG``, a ``--config`` file, explicit flags. The
effective configuration is written as ``run_config.json`` beside each output.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ValidationError
from .registration import MetricWeights

__all__ = ["RunConfig", "CONFIG_ENV", "CONFIG_SCHEMA", "load_config", "resolve_config"]

CONFIG_ENV = "ELASTICTREE_CONFIG"
CONFIG_SCHEMA = "elastictree/run-config@1"


@dataclass(frozen=True)
class RunConfig:
    weights: tuple = (1.0, 1.0, 1.0)
    samples: int = 50
    grid: int = 30
    pca_var: float = 0.99
    k_max: int = 20
    clamp: float = 3.0
    seed: int = 0
    scale_normalize: bool = False
    max_iter: int = 10
    rel_tol: float = 1e-6
    karcher_max_iter: int = 20
    karcher_tol: float = 1e-6
    jobs: int = 1
    refine: bool = True
    per_time: bool = False
    literal: bool = False
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        MetricWeights(*self.weights)
        positive = {"samples": self.samples, "grid": self.grid, "k_max": self.k_max,
                    "clamp": self.clamp, "max_iter": self.max_iter, "rel_tol": self.rel_tol,
                    "karcher_max_iter": self.karcher_max_iter, "karcher_tol": self.karcher_tol,
                    "jobs": self.jobs}
        for name, value in positive.items():
            if not value > 0:
                raise ValidationError(f"{name} must be positive, got {value!r}", pointer=f"/{name}")
        if self.samples < 3 or self.grid < 2:
            raise ValidationError("samples must be >= 3 and grid >= 2")
        if not 0.0 < self.pca_var <= 1.0:
            raise ValidationError(f"pca_var must lie in (0, 1], got {self.pca_var}", pointer="/pca_var")

    @property
    def metric(self) -> MetricWeights:
        return MetricWeights(*self.weights)

    def to_dict(self):
        data = asdict(self)
        data["weights"] = list(self.weights)
        return {"schema": CONFIG_SCHEMA, **data}

    @classmethod
    def from_dict(cls, data, base=None):
        base = base or cls()
        if not isinstance(data, dict):
            raise ValidationError("configuration must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        updates = {}
        for key, value in data.items():
            if key == "schema":
                if value != CONFIG_SCHEMA:
                    raise ValidationError(f"unsupported config schema {value!r}", pointer="/schema")
                continue
            if key not in known:
                raise ValidationError(f"unknown configuration key {key!r}", pointer=f"/{key}")
            updates[key] = _coerce(key, value, getattr(base, key))
        return replace(base, **updates)

    def save(self, directory):
        path = Path(directory) / "run_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        return path


def _coerce(key, value, default):
    try:
        if key == "weights":
            if isinstance(value, str):
                return MetricWeights.parse(value).as_tuple()
            return tuple(float(x) for x in value)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"invalid value {value!r} for {key}", pointer=f"/{key}") from None


def load_config(path, base=None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path}: invalid JSON ({exc.msg})") from exc
    try:
        return RunConfig.from_dict(data, base)
    except ValidationError as exc:
        raise ValidationError(f"config {path}: {exc}", pointer=exc.pointer) from exc


def resolve_config(path=None, overrides=None, env=None) -> RunConfig:
    """Defaults, then ``$ELASTICTREE_CONFIG``, then ``path``, then ``overrides``."""
    env = os.environ if env is None else env
    cfg = RunConfig()
    if env.get(CONFIG_ENV):
        cfg = load_config(env[CONFIG_ENV], cfg)
    if path:
        cfg = load_config(path, cfg)
    if overrides:
        cfg = RunConfig.from_dict({k: v for k, v in overrides.items() if v is not None}, cfg)
    return cfg
