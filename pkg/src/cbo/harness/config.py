"""Experiment configuration and its YAML form.

A config file is a YAML mapping with the sections below; every key is
optional and falls back to the dataclass default::

    name: table1-N100-x0
    mode: particles            # particles | meanfield1d | both
    benchmark: {family: ackley, shift_B: 0.0, shift_C: 0.0, dim: 20}
    cbo: {lam: 1.0, sigma: 5.0, alpha: 30.0, epsilon: 0.001, dt: 0.01,
          heaviside_mode: smoothed_erf, noise: componentwise}
    init: {kind: uniform_box, lower: -3.0, upper: 3.0}
    N: 100
    M: 100
    T: 10.0
    seed_base: 0
    stride: 10
    sweep: {N: [50, 100, 200], shift_B: [0.0, 1.0, 2.0]}
    sweep_budget: 20000
    outputs: results
    meanfield: {h: 0.01, degree: 1, tol: 0.001, ...}

:func:`dump_config` output parses back to an equal config, and dumping that
again gives the same bytes.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..dynamics import CboParams, HeavisideMode, InitDistribution, InitKind, NoiseModel
from ..errors import ConfigError
from ..objective import BenchmarkSpec, Family

SWEEP_KEYS = ("N", "alpha", "shift_B")


class Mode(str, enum.Enum):
    PARTICLES = "particles"
    MEANFIELD1D = "meanfield1d"
    BOTH = "both"


@dataclass(frozen=True)
class MeanFieldSettings:
    """Discretisation and stopping parameters for the 1-D solver."""

    h: float = 0.01
    degree: int = 1
    tol: float = 1e-3
    domain: tuple = (-3.0, 3.0)
    limiter: bool = False
    theta: float = 1.0
    penalty: float | None = None
    penalty_scaled: bool = True
    tau_max: float = 0.1
    positivity_abort: float = 1e-4
    t_expected: float = 100.0
    max_iter: int | None = None
    snapshot_times: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(float(x) for x in self.domain))
        object.__setattr__(self, "snapshot_times", tuple(float(x) for x in self.snapshot_times))
        if len(self.domain) != 2 or self.domain[0] >= self.domain[1]:
            raise ConfigError("meanfield.domain must be [a, b] with a < b")
        if self.h <= 0 or self.tol <= 0 or self.tau_max <= 0:
            raise ConfigError("meanfield h, tol and tau_max must be positive")
        if self.degree < 0:
            raise ConfigError("meanfield.degree must be >= 0")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigError("meanfield.theta must lie in [0.5, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    mode: Mode = Mode.PARTICLES
    benchmark: BenchmarkSpec = field(default_factory=lambda: BenchmarkSpec(Family.ACKLEY, dim=1))
    cbo: CboParams = field(default_factory=CboParams)
    init: InitDistribution = field(default_factory=InitDistribution)
    N: int = 50
    M: int = 100
    T: float = 10.0
    seed_base: int = 0
    stride: int = 10
    sweep: dict | None = None
    sweep_budget: int = 20000  # maximum trajectories a sweep may launch
    outputs: str = "results"
    meanfield: MeanFieldSettings = field(default_factory=MeanFieldSettings)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        if self.T < 0:
            raise ConfigError("T must be non-negative")
        if self.stride < 1:
            raise ConfigError("stride must be at least 1")
        if self.sweep is not None:
            sw = {}
            for key, values in self.sweep.items():
                if key not in SWEEP_KEYS:
                    raise ConfigError(f"cannot sweep over {key!r}; allowed: {', '.join(SWEEP_KEYS)}")
                values = list(values) if isinstance(values, (list, tuple)) else [values]
                if not values:
                    raise ConfigError(f"sweep list for {key!r} is empty")
                sw[key] = [int(v) for v in values] if key == "N" else [float(v) for v in values]
            object.__setattr__(self, "sweep", sw or None)

    # -- sweep expansion --------------------------------------------------

    def sweep_points(self) -> list[tuple[dict, "ExperimentConfig"]]:
        """Cross product of the sweep lists as ``(assignment, config)`` pairs.

        Without a sweep this is the config itself with an empty assignment.
        """
        if not self.sweep:
            return [({}, self)]
        keys = [k for k in SWEEP_KEYS if k in self.sweep]
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            assign = dict(zip(keys, combo))
            out.append((assign, self.at(assign)))
        return out

    def at(self, assign: dict) -> "ExperimentConfig":
        cfg = replace(self, sweep=None, name=f"{self.name}/{point_label(assign)}" if assign else self.name)
        if "N" in assign:
            cfg = replace(cfg, N=int(assign["N"]))
        if "alpha" in assign:
            cfg = replace(cfg, cbo=replace(cfg.cbo, alpha=float(assign["alpha"])))
        if "shift_B" in assign:
            cfg = replace(cfg, benchmark=replace(cfg.benchmark, shift_B=float(assign["shift_B"])))
        return cfg

    def n_trajectories(self) -> int:
        return len(self.sweep_points()) * self.M


def point_label(assign: dict) -> str:
    parts = []
    for k in SWEEP_KEYS:
        if k not in assign:
            continue
        v = assign[k]
        tag = "x" if k == "shift_B" else k
        parts.append(f"{tag}{_num(v)}")
    return "-".join(parts)


def _num(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


# -- (de)serialisation --------------------------------------------------------


def _plain(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return obj.item()
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in ("benchmark", "cbo", "init", "meanfield"):
            v = asdict(v)
        d[f.name] = _plain(v)
    return d


def _section(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r} section: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kw = dict(data)
    kw["benchmark"] = _section(BenchmarkSpec, data.get("benchmark"), "benchmark")
    kw["cbo"] = _section(CboParams, data.get("cbo"), "cbo")
    kw["init"] = _section(InitDistribution, data.get("init"), "init")
    kw["meanfield"] = _section(MeanFieldSettings, data.get("meanfield"), "meanfield")
    try:
        return ExperimentConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None, width=100)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return config_from_dict(data or {})


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text)


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars."""
    if not overrides:
        return cfg
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}") from exc
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                if part == "sweep" and node.get(part) is None:
                    node[part] = {}
                else:
                    raise ConfigError(f"unknown config section {part!r} in override {key!r}")
            node = node[part]
        node[parts[-1]] = value
    return config_from_dict(data)


__all__ = [
    "ExperimentConfig",
    "HeavisideMode",
    "InitKind",
    "MeanFieldSettings",
    "Mode",
    "NoiseModel",
    "SWEEP_KEYS",
    "apply_overrides",
    "config_from_dict",
    "config_to_dict",
    "dump_config",
    "load_config",
    "parse_config",
    "point_label",
]
