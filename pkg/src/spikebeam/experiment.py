"""Experiment specification: everything a CLI run needs, loaded from one YAML file."""

from __future__ import annotations

import dataclasses
import json
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .config import ConfigError, ScenarioConfig, _coerce, load_yaml, scenario_from_mapping
from .rl import TrainConfig
from .snn import LifParams

BACKENDS = ("spiking", "dense", "random")


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 10
    seed: int = 1000
    deterministic: bool = True


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: str = "spiking"
    seeds: tuple[int, ...] = (0,)
    sweep_dbm: tuple[float, ...] | None = None
    output: str = "runs/default"
    evaluation: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"must be one of {', '.join(BACKENDS)}", field_name="backend")
        if len(self.seeds) < 1:
            raise ConfigError("at least one seed is required", field_name="seeds")
        if self.sweep_dbm is not None and len(self.sweep_dbm) < 1:
            raise ConfigError("sweep list is empty", field_name="sweep_dbm")
        if self.sweep_dbm is not None and not all(math.isfinite(v) and v > 0 for v in self.sweep_dbm):
            raise ConfigError("sweep values must be positive dBm", field_name="sweep_dbm")
        if self.evaluation.episodes < 1:
            raise ConfigError("must be >= 1", field_name="evaluation.episodes")

    def replace(self, **changes: Any) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "backend": self.backend,
            "seeds": list(self.seeds),
            "sweep_dbm": None if self.sweep_dbm is None else list(self.sweep_dbm),
            "output": self.output,
            "evaluation": dataclasses.asdict(self.evaluation),
            "scenario": self.scenario.to_dict(),
            "train": self.train.to_dict(),
        }


def _build(cls, data: dict, key_lines: dict[str, int], prefix: str, convert: dict | None = None):
    known = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError("unknown key", field_name=prefix + key, line=key_lines.get(prefix + key))
        try:
            value = convert[key](value) if convert and key in convert else _coerce(known[key], value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", field_name=prefix + key,
                              line=key_lines.get(prefix + key)) from exc
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        # dataclass validators name the offending field at the start of the message
        msg = str(exc)
        name = next((k for k in data if msg.startswith(k)), None)
        raise ConfigError(msg, field_name=prefix + name if name else prefix.rstrip("."),
                          line=key_lines.get(prefix + name) if name else key_lines.get(prefix.rstrip("."))) from exc


def _section(data: dict, name: str, key_lines: dict[str, int]) -> dict:
    value = data.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping", field_name=name, line=key_lines.get(name))
    return value


def spec_from_mapping(data: dict[str, Any], key_lines: dict[str, int] | None = None) -> ExperimentSpec:
    key_lines = key_lines or {}
    allowed = {"scenario", "train", "backend", "seeds", "sweep_dbm", "output", "evaluation"}
    for key in data:
        if key not in allowed:
            raise ConfigError("unknown key", field_name=key, line=key_lines.get(key))
    scenario = scenario_from_mapping(_section(data, "scenario", key_lines), key_lines, "scenario.")
    train_data = dict(_section(data, "train", key_lines))
    lif_data = train_data.pop("lif", None) or {}
    lif = _build(LifParams, lif_data, key_lines, "train.lif.")
    train_cfg = _build(TrainConfig, train_data, key_lines, "train.",
                       {"hidden": lambda v: tuple(int(x) for x in v)})
    train_cfg = dataclasses.replace(train_cfg, lif=lif)
    evaluation = _build(EvalSettings, _section(data, "evaluation", key_lines), key_lines, "evaluation.")
    seeds = data.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    sweep = data.get("sweep_dbm")
    try:
        seeds_t = tuple(int(s) for s in seeds)
    except (TypeError, ValueError) as exc:
        raise ConfigError("seeds must be integers", field_name="seeds", line=key_lines.get("seeds")) from exc
    try:
        sweep_t = None if sweep is None else tuple(float(s) for s in sweep)
    except (TypeError, ValueError) as exc:
        raise ConfigError("sweep values must be numbers", field_name="sweep_dbm",
                          line=key_lines.get("sweep_dbm")) from exc
    try:
        return ExperimentSpec(scenario=scenario, train=train_cfg, backend=str(data.get("backend", "spiking")),
                              seeds=seeds_t, sweep_dbm=sweep_t, output=str(data.get("output", "runs/default")),
                              evaluation=evaluation)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], field_name=exc.field_name,
                          line=key_lines.get(exc.field_name or "")) from None


def load_spec(path: str | Path) -> ExperimentSpec:
    data, key_lines = load_yaml(path)
    return spec_from_mapping(data, key_lines)


_VERSION_CACHE: list[str] = []


def version_string() -> str:
    """``v<version>`` plus the commit hash when the package lives in a git checkout."""
    if _VERSION_CACHE:
        return _VERSION_CACHE[0]
    version = f"v{__version__}"
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            version += f"-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    _VERSION_CACHE.append(version)
    return version


def provenance_lines(spec: ExperimentSpec, **extra: Any) -> list[str]:
    """Comment-header lines: version plus the fully resolved configuration."""
    cfg = spec.to_dict()
    cfg.update(extra)
    return [f"spikebeam {version_string()}", "config " + json.dumps(cfg, sort_keys=True)]
