"""Run configuration: JSON files plus ``section.key=value`` overrides.

A configuration has five sections::

    {
      "physics":   {"omega": 1.0, "beta": 0.5, "eta": 0.6, "temperature": 0.2, ...},
      "numerics":  {"dim": 60, "steps_per_cycle": 1000, "n_cycles": 50, ...},
      "selection": {"mu": 1.0, "mu_grid": [1, 1.5, 2, 5, 10]},
      "campaign":  {"T_grid": [0.2, 1.5], "eta_grid": [0.6], "n_trials": 20,
                    "base_seed": 0, "workers": null},
      "output":    {"directory": "qcselect-out", "formats": ["json", "csv"]}
    }

Missing keys take the defaults below, which form the desk-scale preset: the
reference physics with 60 oscillator states, 50 cycles at 1000 steps per
cycle and 20 trials per truth model.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from qcselect.errors import ConfigError
from qcselect.params import DuffingParams, Numerics

DESK_NUMERICS = Numerics(dim=60, n_cycles=50)

_FORMATS = ("json", "csv")


@dataclass(frozen=True)
class SelectionConfig:
    mu: float = 1.0
    mu_grid: tuple = (1.0, 1.5, 2.0, 5.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "mu_grid", tuple(float(m) for m in self.mu_grid))
        if not self.mu >= 1.0:
            raise ConfigError("selection.mu must be >= 1")
        if not self.mu_grid or any(not m >= 1.0 for m in self.mu_grid):
            raise ConfigError("selection.mu_grid must be non-empty with entries >= 1")


@dataclass(frozen=True)
class CampaignConfig:
    T_grid: tuple = (0.2, 1.5)
    eta_grid: tuple = (0.6,)
    n_trials: int = 20
    base_seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "T_grid", tuple(float(t) for t in self.T_grid))
        object.__setattr__(self, "eta_grid", tuple(float(e) for e in self.eta_grid))
        if not self.T_grid or not self.eta_grid:
            raise ConfigError("campaign grids must be non-empty")
        if any(not (t >= 0 and math.isfinite(t)) for t in self.T_grid):
            raise ConfigError("campaign.T_grid entries must be finite and >= 0")
        if any(not 0.0 <= e <= 1.0 for e in self.eta_grid):
            raise ConfigError("campaign.eta_grid entries must lie in [0, 1]")
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise ConfigError("campaign.n_trials must be a positive integer")
        if int(self.base_seed) != self.base_seed or self.base_seed < 0:
            raise ConfigError("campaign.base_seed must be a non-negative integer")
        if self.workers is not None and (int(self.workers) != self.workers or self.workers < 1):
            raise ConfigError("campaign.workers must be a positive integer or null")


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "qcselect-out"
    formats: tuple = _FORMATS

    def __post_init__(self):
        fmts = (self.formats,) if isinstance(self.formats, str) else tuple(self.formats)
        object.__setattr__(self, "formats", fmts)
        unknown = set(self.formats) - set(_FORMATS)
        if unknown:
            raise ConfigError(f"unknown output formats {sorted(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    physics: DuffingParams = field(default_factory=DuffingParams)
    numerics: Numerics = DESK_NUMERICS
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def dt(self) -> float:
        return self.numerics.dt(self.physics.omega)

    def to_dict(self) -> dict:
        return {name: _plain(dataclasses.asdict(getattr(self, name))) for name in _SECTIONS}

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown configuration sections {sorted(unknown)}")
        kwargs = {}
        for name, typ in _SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            kwargs[name] = _build(typ, section, DEFAULTS_BY_SECTION[name], name)
        return cls(**kwargs)

    def with_overrides(self, assignments) -> RunConfig:
        """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
        data = self.to_dict()
        for item in assignments:
            key, sep, raw = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            if section not in data:
                raise ConfigError(f"unknown configuration section {section!r}")
            if name not in data[section]:
                raise ConfigError(f"unknown key {name!r} in section {section!r}")
            data[section][name] = _parse_value(raw.strip())
        return RunConfig.from_dict(data)


_SECTIONS = {
    "physics": DuffingParams,
    "numerics": Numerics,
    "selection": SelectionConfig,
    "campaign": CampaignConfig,
    "output": OutputConfig,
}

DEFAULTS_BY_SECTION = {
    "physics": DuffingParams(),
    "numerics": DESK_NUMERICS,
    "selection": SelectionConfig(),
    "campaign": CampaignConfig(),
    "output": OutputConfig(),
}


def _build(typ, section: dict, default, name: str):
    fields = {f.name: f for f in dataclasses.fields(typ)}
    unknown = set(section) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in section {name!r}")
    values = dataclasses.asdict(default)
    values.update(section)
    for key, value in values.items():
        values[key] = _coerce(value, getattr(default, key), f"{name}.{key}")
    try:
        return typ(**values)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int) and default is not None:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return (value,)
        if isinstance(value, str):
            return tuple(v for v in value.split(",") if v)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list")
        return tuple(value)
    return value


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if "," in raw:
            return [_parse_value(v) for v in raw.split(",") if v]
        return raw


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path=None, overrides=()) -> RunConfig:
    """Read a JSON configuration (or the defaults when ``path`` is None)."""
    if path is None:
        cfg = RunConfig()
    else:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        cfg = RunConfig.from_dict(data)
    return cfg.with_overrides(overrides) if overrides else cfg
