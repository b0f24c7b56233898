"""Built-in experiment configurations.

Each table cell, sweep and figure dataset has a named preset. Sample counts
default to a desk-scale ``M`` (100 for the tables); ``full_M`` is the count
behind the reference numbers and is applied by ``--full-M`` on the CLI.
Group names (``table1``, ``fig3-benchmarks-1d``, ...) expand to several
presets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..dynamics import CboParams, InitDistribution
from ..errors import ConfigError
from ..objective import BenchmarkSpec
from .config import ExperimentConfig, MeanFieldSettings, Mode, point_label


@dataclass(frozen=True)
class Preset:
    name: str
    config: ExperimentConfig
    summary: str
    full_M: int


_REGISTRY: dict[str, Preset] = {}
_GROUPS: dict[str, tuple[str, ...]] = {}


def _add(name, cfg, summary, full_M):
    cfg = replace(cfg, name=name)
    _REGISTRY[name] = Preset(name, cfg, summary, full_M)


# -- one-dimensional experiments ---------------------------------------------

_P1D = CboParams(lam=1.0, sigma=0.7, alpha=40.0, dt=0.1)
_BOX3 = InitDistribution("uniform_box", -3.0, 3.0)
_MF = MeanFieldSettings(h=0.01, degree=1, tol=1e-3, domain=(-3.0, 3.0), limiter=True)

for _sig, _suffix, _txt in ((0.7, "", "stochastic"), (0.0, "-deterministic", "deterministic")):
    _add(
        f"fig1-double-well{_suffix}",
        ExperimentConfig(
            benchmark=BenchmarkSpec("double_well", dim=1),
            cbo=replace(_P1D, sigma=_sig),
            init=_BOX3,
            N=50,
            M=1,
            T=80.0,
            stride=1,
        ),
        f"double-well objective, {_txt} particles (sigma={_sig}), N=50, one realisation",
        full_M=1,
    )
_GROUPS["fig1-double-well-pair"] = ("fig1-double-well", "fig1-double-well-deterministic")

_fig3 = []
for _fam in ("ackley", "rastrigin"):
    for _B, _C, _tag in ((0.0, 0.0, ""), (2.0, 5.0, "-shifted")):
        _name = f"fig3-{_fam}{_tag}"
        _add(
            _name,
            ExperimentConfig(
                mode=Mode.BOTH,
                benchmark=BenchmarkSpec(_fam, shift_B=_B, shift_C=_C, dim=1),
                cbo=_P1D,
                init=_BOX3,
                N=50,
                M=100,
                T=80.0,
                stride=10,
                meanfield=_MF,
            ),
            f"1-D {_fam} B={_B:g} C={_C:g}: particle histogram of v_f plus mean-field support",
            full_M=500,
        )
        _fig3.append(_name)
_GROUPS["fig3-benchmarks-1d"] = tuple(_fig3)

_add(
    "fig4-w1-convergence",
    ExperimentConfig(
        benchmark=BenchmarkSpec("ackley", shift_C=1.0, dim=1),
        cbo=_P1D,
        init=InitDistribution("equidistant_1d", -3.0, 1.0),
        N=100,
        M=200,
        T=20.0,
        stride=1,
        sweep={"N": [100, 1000]},
    ),
    "1-D Ackley C=1, equidistant start on [-3, 1]: W1 distance to the minimizer versus time",
    full_M=1000,
)

# -- d = 20 parameter studies ----------------------------------------------------

_P20 = CboParams(lam=1.0, sigma=5.0, alpha=30.0, dt=0.01)
_BASE20 = dict(init=_BOX3, M=100, T=10.0, stride=10)
_XS = (0.0, 1.0, 2.0)

_TABLES = {
    "table1": ("ackley", "N", (50, 100, 200), "Ackley d=20, alpha=30, varying N"),
    "table2": ("rastrigin", "N", (50, 100, 200), "Rastrigin d=20, alpha=30, varying N"),
    "table3": ("ackley", "alpha", (10.0, 20.0, 30.0, 40.0, 50.0), "Ackley d=20, N=100, varying alpha"),
    "table4": ("rastrigin", "alpha", (10.0, 20.0, 30.0, 40.0, 50.0), "Rastrigin d=20, N=100, varying alpha"),
}

for _tab, (_fam, _key, _vals, _txt) in _TABLES.items():
    _base = ExperimentConfig(benchmark=BenchmarkSpec(_fam, dim=20), cbo=_P20, N=100, **_BASE20)
    _add(_tab, replace(_base, sweep={_key: list(_vals), "shift_B": list(_XS)}), f"{_txt}, x* in {{0,1,2}}", 1000)
    _cells = []
    for _x in _XS:
        for _v in _vals:
            _assign = {_key: _v, "shift_B": _x}
            _name = f"{_tab}-{point_label(_assign)}"
            _add(_name, replace(_base.at(_assign), sweep=None), f"{_txt}: cell {point_label(_assign)}", 1000)
            _cells.append(_name)
    _GROUPS[f"{_tab}-cells"] = tuple(_cells)

for _fig, (_key, _vals) in (("fig5", ("N", [50, 100, 200])), ("fig6", ("alpha", [10.0, 20.0, 30.0, 40.0, 50.0]))):
    for _fam in ("ackley", "rastrigin"):
        _add(
            f"{_fig}-series-{_fam}",
            ExperimentConfig(
                benchmark=BenchmarkSpec(_fam, dim=20), cbo=_P20, N=100, sweep={_key: _vals}, **_BASE20
            ),
            f"{_fam} d=20, x*=0: time series of (1/d) E|v_f - x*|^2 for varying {_key}",
            full_M=1000,
        )
    _GROUPS[f"{_fig}-series"] = (f"{_fig}-series-ackley", f"{_fig}-series-rastrigin")


# -- lookup --------------------------------------------------------------------


def list_presets() -> list[str]:
    return sorted(_REGISTRY) + sorted(_GROUPS)


def is_group(name: str) -> bool:
    return name in _GROUPS


def expand(name: str) -> list[str]:
    """Member preset names of a group, or ``[name]`` for a single preset."""
    if name in _GROUPS:
        return list(_GROUPS[name])
    if name in _REGISTRY:
        return [name]
    raise ConfigError(f"unknown preset {name!r}")


def get_preset(name: str) -> Preset:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}") from None


def preset_config(name: str, full_M: bool = False) -> ExperimentConfig:
    p = get_preset(name)
    return replace(p.config, M=p.full_M) if full_M else p.config


def describe_preset(name: str) -> str:
    from .config import dump_config

    if name in _GROUPS:
        lines = [f"{name}: group of {len(_GROUPS[name])} presets"]
        lines += [f"  {m}: {_REGISTRY[m].summary}" for m in _GROUPS[name]]
        return "\n".join(lines)
    p = get_preset(name)
    head = f"{p.name}: {p.summary}\n(full sample count M={p.full_M})\n"
    return head + dump_config(p.config)
