"""Declarative experiment configuration (JSON, versioned schema)."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .bridge import GridSpec
from .errors import LevyBridgeError, PreconditionError
from .kernels import model_from_dict
from .measures import LengthMeasure, PinningMeasure, ValidationReport, validate_pair

SCHEMA = "levybridge/1"


class ConfigError(LevyBridgeError):
    """Malformed or invalid configuration."""


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.path=value`` overrides; values are parsed as JSON when possible."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
            node = nxt
        node[parts[-1]] = _parse_value(value)
    return out


def _grid_from_dict(d):
    if d is None:
        return GridSpec()
    if "times" in d:
        return GridSpec(times=tuple(float(t) for t in d["times"]))
    return GridSpec(horizon=float(d.get("horizon", 1.0)), n_steps=int(d.get("n_steps", 10)))


@dataclass
class ExperimentConfig:
    """A full experiment: process, laws of (tau, Z), grid, operation and MC settings."""

    model: object
    length: LengthMeasure
    pinning: PinningMeasure
    grid: GridSpec = field(default_factory=GridSpec)
    operation: str | None = None
    params: dict = field(default_factory=dict)
    n_paths: int = 1000
    seed: int = 0
    method: str = "auto"
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict):
        if raw.get("schema") != SCHEMA:
            raise ConfigError(f"config schema must be {SCHEMA!r}, got {raw.get('schema')!r}")
        try:
            mc = raw.get("mc", {})
            seed = int(mc.get("seed", 0))
            if not 0 <= seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            return cls(
                model=model_from_dict(raw["model"]),
                length=LengthMeasure.from_dict(raw["length"]),
                pinning=PinningMeasure.from_dict(raw["pinning"]),
                grid=_grid_from_dict(raw.get("grid")),
                operation=raw.get("operation"),
                params=dict(raw.get("params", {})),
                n_paths=int(mc.get("n_paths", 1000)),
                seed=seed,
                method=str(mc.get("method", "auto")),
                output=dict(raw.get("output", {})),
            )
        except KeyError as exc:
            raise ConfigError(f"config is missing {exc}") from None
        except (TypeError, ValueError, PreconditionError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        """Normalized form; loading it again yields the same dict."""
        return {
            "schema": SCHEMA,
            "model": self.model.to_dict(),
            "length": self.length.to_dict(),
            "pinning": self.pinning.to_dict(),
            "grid": self.grid.to_dict(),
            "operation": self.operation,
            "params": self.params,
            "mc": {"n_paths": self.n_paths, "seed": self.seed, "method": self.method},
            "output": self.output,
        }

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def validate(self) -> ValidationReport:
        return validate_pair(self.model, self.length, self.pinning)


def load_config(path, overrides=(), seed=None) -> ExperimentConfig:
    """Read a JSON config, apply ``--set`` overrides and an optional seed override."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw.setdefault("mc", {})["seed"] = int(seed)
    return ExperimentConfig.from_dict(raw)
