"""Consensus-based global optimisation.

Particle engine (:mod:`cbo.dynamics`), Gibbs-weighted consensus
(:mod:`cbo.consensus`), a one-dimensional DG solver for the mean-field
Fokker-Planck equation (:mod:`cbo.meanfield1d`), diagnostics and an
experiment harness with a command-line front end (:mod:`cbo.harness`,
``cbo`` on the shell).
"""

from ._accel import BACKEND
from .consensus import ConsensusPoint, consensus_point, consensus_point_density
from .diagnostics import (
    RunRecord,
    SampleStatistics,
    aggregate,
    ensemble_variance,
    laplace_value,
    success_and_distance,
    w1_to_dirac,
)
from .dynamics import (
    CboParams,
    HeavisideMode,
    InitDistribution,
    InitKind,
    NoiseModel,
    ParticleEnsemble,
    em_step,
    run_trajectory,
    smoothed_heaviside,
)
from .errors import CBOError
from .meanfield1d import DensityField1D, Grid, MeanFieldOptions, solve_to_stationarity, strang_step
from .objective import BenchmarkSpec, Family, Objective, make_benchmark

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BenchmarkSpec",
    "CBOError",
    "CboParams",
    "ConsensusPoint",
    "DensityField1D",
    "Family",
    "Grid",
    "HeavisideMode",
    "InitDistribution",
    "InitKind",
    "MeanFieldOptions",
    "NoiseModel",
    "Objective",
    "ParticleEnsemble",
    "RunRecord",
    "SampleStatistics",
    "aggregate",
    "consensus_point",
    "consensus_point_density",
    "em_step",
    "ensemble_variance",
    "laplace_value",
    "make_benchmark",
    "run_trajectory",
    "smoothed_heaviside",
    "solve_to_stationarity",
    "strang_step",
    "success_and_distance",
    "w1_to_dirac",
]
