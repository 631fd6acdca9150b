"""Scenario configuration for the roadside-unit V2X simulator.

All powers are stored in watts. The YAML loader accepts ``*_dbm`` keys and
converts them once, at load time.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    """Invalid configuration value or file. ``line`` is 1-based when known."""

    def __init__(self, message: str, field_name: str | None = None, line: int | None = None):
        self.field_name = field_name
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and simulation parameters of the V2X scenario.

    Defaults reproduce the reference setting: three vehicles on a straight
    road at y = 10 m, a 32x32-element RSU at the origin operating at 30 GHz.
    Path-loss parameters and CRLB thresholds are not part of that setting and
    use the values documented in the README.
    """

    num_vehicles: int = 3
    n_tx: int = 32
    n_rx: int = 32
    carrier_freq: float = 30e9
    slot_duration: float = 0.02
    horizon: int = 100
    max_power: float = dbm_to_watt(40.0)
    noise_power_sense: float = dbm_to_watt(-80.0)
    noise_power_comm: float = dbm_to_watt(-80.0)
    fading_factor: complex = 10 + 10j
    matched_filter_gain: float = 10.0
    ref_pathloss: float = 1e-6
    ref_distance: float = 1.0
    pathloss_exponent: float = 2.5
    alpha_tau: float = 1e-9
    alpha_mu: float = 2e3
    sigma_theta: float = math.radians(0.02)
    sigma_d: float = 0.2
    sigma_v: float = 0.5
    eps_theta: float = math.radians(0.5) ** 2
    eps_d: float = 1.0
    initial_positions: tuple[tuple[float, float], ...] = ((-5.0, 10.0), (-15.0, 10.0), (-25.0, 10.0))
    speed_range: tuple[float, float] = (10.0, 14.0)
    rng_seed: int = 0

    # reward shaping and modelling choices
    weight_crlb_theta: float = 1.0
    weight_crlb_d: float = 1.0
    standard_jain: bool = False
    # post-matched-filter noise variance in the angle CRLB; None -> noise_power_sense
    crlb_noise_var: float | None = None
    angle_var_cap: float = math.radians(5.0) ** 2
    # measurement-noise variances are capped at this multiple of alpha^2 (SINR floor 1e-6)
    variance_cap_factor: float = 1e6
    cos_guard: float = 0.05

    # observation normalisation bounds
    max_distance: float = 60.0
    max_speed: float = 20.0
    sinr_db_clip: tuple[float, float] = (-20.0, 60.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "fading_factor", complex(self.fading_factor))
        object.__setattr__(
            self, "initial_positions", tuple(tuple(float(c) for c in p) for p in self.initial_positions)
        )
        object.__setattr__(self, "speed_range", tuple(float(s) for s in self.speed_range))
        object.__setattr__(self, "sinr_db_clip", tuple(float(s) for s in self.sinr_db_clip))
        self.validate()

    @property
    def sigma_y2(self) -> float:
        return self.noise_power_sense if self.crlb_noise_var is None else self.crlb_noise_var

    @property
    def obs_dim(self) -> int:
        return 4 * self.num_vehicles

    def validate(self) -> None:
        def need(cond: bool, name: str, msg: str) -> None:
            if not cond:
                raise ConfigError(msg, field_name=name)

        need(self.num_vehicles >= 1, "num_vehicles", "must be >= 1")
        need(self.n_tx >= 1, "n_tx", "must be >= 1")
        need(self.n_rx >= 1, "n_rx", "must be >= 1")
        need(self.horizon >= 1, "horizon", "must be >= 1")
        for name in ("carrier_freq", "slot_duration", "max_power", "noise_power_sense",
                     "noise_power_comm", "matched_filter_gain", "ref_pathloss", "ref_distance",
                     "alpha_tau", "alpha_mu", "eps_theta", "eps_d", "angle_var_cap",
                     "variance_cap_factor", "max_distance", "max_speed"):
            value = getattr(self, name)
            need(math.isfinite(value) and value > 0, name, f"must be finite and > 0, got {value!r}")
        for name in ("sigma_theta", "sigma_d", "sigma_v", "weight_crlb_theta", "weight_crlb_d"):
            value = getattr(self, name)
            need(math.isfinite(value) and value >= 0, name, f"must be >= 0, got {value!r}")
        need(self.fading_factor != 0, "fading_factor", "must be nonzero")
        need(0 < self.cos_guard < 1, "cos_guard", "must lie in (0, 1)")
        need(self.crlb_noise_var is None or self.crlb_noise_var > 0, "crlb_noise_var", "must be > 0")
        need(len(self.initial_positions) == self.num_vehicles, "initial_positions",
             f"expected {self.num_vehicles} positions, got {len(self.initial_positions)}")
        for x, y in self.initial_positions:
            need(y > 0, "initial_positions", "vehicles must have y > 0 so the angle lies in (0, pi)")
        lo, hi = self.speed_range
        need(0 <= lo <= hi, "speed_range", "need 0 <= low <= high")
        need(self.sinr_db_clip[0] < self.sinr_db_clip[1], "sinr_db_clip", "need low < high")

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        """Plain-data view, used for provenance headers."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, complex):
                value = [value.real, value.imag]
            elif isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[f.name] = value
        return out


# keys accepted in dBm and the watt field they set
_DBM_KEYS = {
    "max_power_dbm": "max_power",
    "noise_power_sense_dbm": "noise_power_sense",
    "noise_power_comm_dbm": "noise_power_comm",
}
# angles accepted in degrees
_DEG_KEYS = {"sigma_theta_deg": "sigma_theta"}
_DEG2_KEYS = {"eps_theta_deg2": "eps_theta", "angle_var_cap_deg2": "angle_var_cap"}


def _key_lines(text: str) -> dict[str, int]:
    """Map top-level and nested mapping keys to their 1-based line numbers."""
    lines: dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node: Any, prefix: str) -> None:
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                name = f"{prefix}{key_node.value}"
                lines[name] = key_node.start_mark.line + 1
                walk(value_node, name + ".")

    walk(root, "")
    return lines


def _coerce(type_name: str, value: Any) -> Any:
    """Apply the scalar field type; YAML reads e.g. ``3e10`` as a string."""
    if isinstance(value, bool) and type_name in ("int", "float"):
        raise ValueError("expected a number")
    if type_name == "float":
        return float(value)
    if type_name == "int":
        if float(value) != int(float(value)):
            raise ValueError("expected an integer")
        return int(float(value))
    if type_name == "bool" and not isinstance(value, bool):
        raise ValueError("expected true or false")
    if type_name.startswith("float |") and value is not None:
        return float(value)
    if type_name.startswith("tuple") and not isinstance(value, (list, tuple)):
        raise ValueError("expected a list")
    return value


def scenario_from_mapping(data: dict[str, Any], key_lines: dict[str, int] | None = None,
                          prefix: str = "") -> ScenarioConfig:
    """Build a ScenarioConfig from a plain mapping, converting dBm/degree keys."""
    key_lines = key_lines or {}
    known = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        line = key_lines.get(prefix + key)
        try:
            if key in _DBM_KEYS:
                kwargs[_DBM_KEYS[key]] = dbm_to_watt(float(value))
            elif key in _DEG_KEYS:
                kwargs[_DEG_KEYS[key]] = math.radians(float(value))
            elif key in _DEG2_KEYS:
                kwargs[_DEG2_KEYS[key]] = math.radians(1.0) ** 2 * float(value)
            elif key == "fading_factor":
                if isinstance(value, (list, tuple)) and len(value) == 2:
                    kwargs[key] = complex(float(value[0]), float(value[1]))
                else:
                    kwargs[key] = complex(str(value).replace(" ", ""))
            elif key in known:
                kwargs[key] = _coerce(known[key], value)
            else:
                raise ConfigError("unknown key", field_name=prefix + key, line=line)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value {value!r}: {exc}", field_name=prefix + key, line=line) from exc
    try:
        return ScenarioConfig(**kwargs)
    except ConfigError as exc:
        name = exc.field_name
        candidates = [k for k in data if k == name or _DBM_KEYS.get(k) == name
                      or _DEG_KEYS.get(k) == name or _DEG2_KEYS.get(k) == name]
        line = key_lines.get(prefix + candidates[0]) if candidates else None
        raise ConfigError(str(exc).split(": ", 1)[-1], field_name=prefix + (name or ""), line=line) from None
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_yaml(path: str | Path) -> tuple[dict[str, Any], dict[str, int]]:
    """Read a YAML mapping plus a key -> line index for diagnostics."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError:
        raise
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark is not None else None) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    return data, _key_lines(text)
