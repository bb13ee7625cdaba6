"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

RECIPES = ("none", "fig1", "fig2", "fig3")
ALGORITHMS = ("rappel", "hyrule", "offline_only", "online_only", "optcov_only")
FEATURES = ("one-hot", "projected")
BEHAVIORS = ("uniform", "adversarial")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    recipe: str = "none"
    env: str = "mini-tetris"
    features: str = "projected"
    k: int = 60
    projection_n_off: int = 200
    behavior: str = "uniform"
    algorithm: str = "rappel"
    n_off: int = 200
    n_on: int = 100
    T: int = 500
    tau: float = 0.6
    lam: float = 0.0  # 0 selects the algorithm default
    delta: float = 0.05
    c_b: float = 0.02
    c_var: float = 0.01
    c_e: float = 0.1
    c1: float = 0.02
    c2: float = 0.02
    c3: float = 0.02
    c_sigma: float = 1e-6
    adversary_episodes: int = 500
    checkpoint_every: int = 10
    mc_rollouts: int = 1000
    trials: int = 1
    seed: int = 0
    out: str = "results"

    def validate(self) -> None:
        choices = {"recipe": RECIPES, "algorithm": ALGORITHMS, "features": FEATURES, "behavior": BEHAVIORS}
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}: {getattr(self, key)!r} is not one of {', '.join(allowed)}")
        positive = ("k", "projection_n_off", "trials", "checkpoint_every", "mc_rollouts", "adversary_episodes", "T")
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be at least 1")
        for key in ("n_off", "n_on", "seed"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key}: must be nonnegative")
        for key in ("tau", "c_e"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key}: must be positive")
        for key in ("lam", "c_b", "c_var", "c1", "c2", "c3", "c_sigma"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key}: must be nonnegative")
        if not 0 < self.delta < 1:
            raise ConfigError("delta: must lie in (0, 1)")
        if self.mc_rollouts < 2:
            raise ConfigError("mc_rollouts: must be at least 2")

    def replace(self, **changes) -> ExperimentConfig:
        out = dataclasses.replace(self, **changes)
        out.validate()
        return out


def _coerce(key: str, text: str, kind):
    try:
        if kind in (bool, "bool"):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {getattr(kind, '__name__', kind)}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{key}: unknown configuration key")
        values[key] = _coerce(key, value.strip('"'), kinds[key])
    cfg = dataclasses.replace(base or ExperimentConfig(), **values)
    cfg.validate()
    return cfg


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), base)


def format_config(cfg: ExperimentConfig, extra: dict | None = None) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {value!r}" if isinstance(value, float) else f"{f.name} = {value}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
