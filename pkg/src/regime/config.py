"""Flat ``key = value`` experiment configuration with dotted section names.

Example::

    mode = tabular
    seeds = 0:20
    instance.kind = random
    instance.states = 6
    [algo]
    N = 800
    lambda = auto

A ``[section]`` header prefixes the keys that follow it.  Lists are comma
separated; ``a:b`` expands to ``a, a+1, ..., b-1``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .mdp import ConfigurationError

MODES = ("tabular", "linear", "action", "audits")

DEFAULTS: dict[str, Any] = {
    "mode": "tabular",
    "seeds": [0],
    "output": "",
    "output.wallclock": False,
    "instance.kind": "random",
    "instance.states": 6,
    "instance.actions": 3,
    "instance.horizon": 4,
    "instance.dim": 4,
    "instance.features": "one_hot",
    "instance.r_max": 2.0,
    "instance.seed": 0,  # or "run": a fresh instance per run seed
    "instance.path": "",
    "instance.gap_min": 0.3,
    "instance.gap_max": 0.5,
    "algo.N": 200,
    "algo.K": 1000,
    "algo.lambda": "auto",
    "algo.lambda_ex": 1.0,
    "algo.lambda_pl": 1.0,
    "algo.beta_ex": "auto",
    "algo.beta_pl": "auto",
    "algo.beta_scale": 1.0,
    "algo.eps": 0.1,
    "algo.delta": 0.1,
    "algo.transitions": "exact",
    "algo.rf_budget": 10_000,
    "algo.design": "regime",
    "algo.candidates": "auto",
    "algo.n_candidates": 32,
    "algo.restarts": 4,
    "algo.B_adv": 0.5,
    "algo.plan_with_true": False,
    "algo.tol": 1e-8,
    "algo.max_iter": 50_000,
    "sweep.param": "algo.N",
    "sweep.values": [100, 200, 400, 800],
    "sweep.workers": 1,
    "audit.trials": 100,
    "audit.sabotage": False,
    "audit.sandwich_seeds": 40,
}

UNHASHED = ("output", "output.wallclock", "sweep.workers")

REQUIRED = {
    "tabular": ("instance.states", "instance.actions", "instance.horizon", "algo.N"),
    "linear": ("instance.states", "instance.actions", "instance.horizon", "instance.dim", "algo.N", "algo.K"),
    "action": ("instance.states", "instance.actions", "instance.horizon", "algo.N", "algo.B_adv"),
    "audits": (),
}


def parse_value(text: str) -> Any:
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("", "none", "null"):
        return None
    if "," in text:
        out: list[Any] = []
        for part in text.split(","):
            if part.strip():
                item = parse_value(part)
                out.extend(item if isinstance(item, list) else [item])
        return out
    if ":" in text:
        lo, _, hi = text.partition(":")
        try:
            return list(range(int(lo), int(hi)))
        except ValueError:
            return text
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    prefix = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            prefix = line[1:-1].strip()
            prefix = prefix + "." if prefix else ""
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        out[prefix + key.strip()] = parse_value(value)
    return out


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        key, _, value = item.partition("=")
        out[key.strip()] = parse_value(value)
    return out


# keys that accept either a number or a keyword
FLEXIBLE = {"instance.seed"}


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS.get(key)
    if key in FLEXIBLE:
        return value
    if isinstance(default, list) and not isinstance(value, list):
        return [] if value is None else [value]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key} must be true or false")
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigurationError(f"{key} must be numeric, got {value!r}")
    return value


@dataclass
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        merged = dict(DEFAULTS)
        for key, value in self.values.items():
            if key not in DEFAULTS:
                raise ConfigurationError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value)
        self.values = merged
        self.validate()

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    @property
    def mode(self) -> str:
        return self.values["mode"]

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.values["seeds"]]

    def validate(self) -> None:
        mode = self.values["mode"]
        if mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
        for key in REQUIRED[mode]:
            if self.values.get(key) is None:
                raise ConfigurationError(f"{key} is required in {mode} mode")
        if not self.values["sweep.values"]:
            raise ConfigurationError("sweep.values must be non-empty")
        if self.values["sweep.param"] not in DEFAULTS:
            raise ConfigurationError(f"cannot sweep unknown key {self.values['sweep.param']!r}")
        for key in ("instance.states", "instance.actions", "instance.horizon"):
            if int(self.values[key]) < 1:
                raise ConfigurationError(f"{key} must be positive")
        if self.values["algo.N"] < 0 or self.values["algo.K"] < 0:
            raise ConfigurationError("N and K must be nonnegative")
        if self.values["algo.design"] not in ("regime", "uniform"):
            raise ConfigurationError("algo.design must be regime or uniform")
        if self.values["algo.transitions"] not in ("exact", "reward-free"):
            raise ConfigurationError("algo.transitions must be exact or reward-free")

    def with_updates(self, updates: dict[str, Any]) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(updates)
        return ExperimentConfig(vals)

    def canonical(self) -> str:
        """Keys that can change results; worker count and output location cannot."""
        vals = {k: v for k, v in self.values.items() if k not in UNHASHED}
        return json.dumps(vals, sort_keys=True, default=str)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def dumps(self) -> str:
        def fmt(v: Any) -> str:
            if isinstance(v, list):
                return ",".join(fmt(x) for x in v)
            if isinstance(v, bool):
                return "true" if v else "false"
            return "none" if v is None else str(v)

        return "".join(f"{k} = {fmt(v)}\n" for k, v in sorted(self.values.items()))


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    values: dict[str, Any] = {}
    if path:
        try:
            values.update(parse_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    values.update(parse_overrides(overrides))
    return ExperimentConfig(values)
