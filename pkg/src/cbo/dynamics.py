"""Euler-Maruyama time stepping of the interacting particle system.

One step moves every particle by

    X <- X - lam * H(f(X) - f(v)) * (X - v) * dt + sqrt(2) * sigma * S(X - v) dW,

where ``v`` is the consensus point of the pre-step ensemble and
``dW ~ N(0, dt I_d)`` independently per particle. ``H`` is either the
erf-smoothed Heaviside function or identically one. The noise scaling ``S``
is selected by :class:`NoiseModel`:

* ``componentwise`` (default): coordinate ``k`` gets ``|X_k - v_k| dW_k``.
* ``isotropic``: every coordinate gets the Euclidean norm ``|X - v|_2``.

In one dimension the two coincide. The isotropic form is unstable for
``sigma^2 (d - 2) > lam``; with ``d = 20, sigma = 5`` it diverges within a few
hundred steps.

Random numbers come from a Philox (counter-based) generator seeded with the
run seed: the initial positions are drawn first, then one ``(N, d)`` block of
standard normals per step, row ``i`` belonging to particle ``i``.
"""

from __future__ import annotations

import enum
import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

from ._accel import jit, select
from .consensus import consensus_point, weighted_mean
from .diagnostics import RunRecord, ensemble_variance, success_and_distance, w1_to_dirac
from .errors import ConfigError, DivergedRunError, InvalidObjectiveError
from .objective import Objective

SQRT2 = math.sqrt(2.0)


class HeavisideMode(str, enum.Enum):
    SMOOTHED_ERF = "smoothed_erf"
    ALWAYS_ONE = "always_one"


class NoiseModel(str, enum.Enum):
    COMPONENTWISE = "componentwise"
    ISOTROPIC = "isotropic"


@dataclass(frozen=True)
class CboParams:
    lam: float = 1.0
    sigma: float = 0.7
    alpha: float = 30.0
    epsilon: float = 1e-3
    dt: float = 0.01
    heaviside_mode: HeavisideMode = HeavisideMode.SMOOTHED_ERF
    noise: NoiseModel = NoiseModel.COMPONENTWISE

    def __post_init__(self):
        object.__setattr__(self, "heaviside_mode", HeavisideMode(self.heaviside_mode))
        object.__setattr__(self, "noise", NoiseModel(self.noise))
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")


class InitKind(str, enum.Enum):
    UNIFORM_BOX = "uniform_box"
    EQUIDISTANT_1D = "equidistant_1d"


@dataclass(frozen=True)
class InitDistribution:
    kind: InitKind = InitKind.UNIFORM_BOX
    lower: float | tuple = -3.0
    upper: float | tuple = 3.0

    def __post_init__(self):
        object.__setattr__(self, "kind", InitKind(self.kind))
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ConfigError("init bounds need lower < upper componentwise")
        if self.kind is InitKind.EQUIDISTANT_1D and lo.size != 1:
            raise ConfigError("equidistant initialisation is one-dimensional")

    def bounds(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (d,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (d,)).copy()
        return lo, hi

    def sample(self, N: int, d: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind is InitKind.EQUIDISTANT_1D:
            if d != 1:
                raise ConfigError("equidistant initialisation is one-dimensional")
            return np.linspace(float(self.lower), float(self.upper), N)[:, None]
        lo, hi = self.bounds(d)
        return lo + (hi - lo) * rng.random((N, d))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    rng: np.random.Generator
    time: float = 0.0
    step: int = 0

    @classmethod
    def initial(cls, init: InitDistribution, N: int, d: int, seed: int) -> "ParticleEnsemble":
        if N < 1:
            raise ConfigError("need at least one particle")
        rng = make_rng(seed)
        return cls(positions=np.ascontiguousarray(init.sample(N, d, rng)), rng=rng)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


def smoothed_heaviside(x, epsilon: float = 1e-3):
    """``erf(x / epsilon) / 2 + 1/2``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    out = 0.5 * erf(np.asarray(x, dtype=float) / epsilon) + 0.5
    return float(out) if np.ndim(out) == 0 else out


# -- update kernel -------------------------------------------------------------


@jit
def _em_update_nb(X, fX, v, fv, Z, lam, sigma, eps, dt, always_one, isotropic):
    """Apply one step in place; ``Z`` holds standard normals or is empty when sigma = 0."""
    n, d = X.shape
    noise = sigma > 0.0
    amp = SQRT2 * sigma * math.sqrt(dt)
    finite = True
    for i in range(n):
        if always_one:
            h = 1.0
        else:
            h = 0.5 * math.erf((fX[i] - fv) / eps) + 0.5
        drift = lam * h * dt
        norm = 0.0
        if isotropic:
            for k in range(d):
                diff = X[i, k] - v[k]
                norm += diff * diff
            norm = math.sqrt(norm)
        for k in range(d):
            diff = X[i, k] - v[k]
            x = X[i, k] - drift * diff
            if noise:
                x += amp * (norm if isotropic else abs(diff)) * Z[i, k]
            X[i, k] = x
            if not math.isfinite(x):
                finite = False
    return finite


def _em_update_np(X, fX, v, fv, Z, lam, sigma, eps, dt, always_one, isotropic):
    D = X - v
    if always_one:
        h = np.ones(X.shape[0])
    else:
        h = 0.5 * erf((fX - fv) / eps) + 0.5
    X -= (lam * dt) * h[:, None] * D
    if sigma > 0.0:
        amp = SQRT2 * sigma * math.sqrt(dt)
        if isotropic:
            X += (amp * np.sqrt(np.sum(D * D, axis=1)))[:, None] * Z
        else:
            X += amp * np.abs(D) * Z
    return bool(np.all(np.isfinite(X)))


em_update = select(_em_update_nb, _em_update_np)

_NO_NOISE = np.empty((0, 0))


def _advance(X, p: CboParams, f: Objective, rng, always_one: bool):
    """One in-place step on the raw array. Returns ``(v_f, finite)`` with ``v_f`` pre-step."""
    fX = f.batch(X)
    if not np.all(np.isfinite(fX)):
        raise InvalidObjectiveError("objective returned non-finite values")
    v, _ = weighted_mean(X, fX, p.alpha)
    fv = float(f.batch(v.reshape(1, -1))[0]) if not always_one else 0.0
    Z = rng.standard_normal(X.shape) if p.sigma > 0.0 else _NO_NOISE
    finite = em_update(
        X, fX, v, fv, Z, p.lam, p.sigma, p.epsilon, p.dt, always_one,
        p.noise is NoiseModel.ISOTROPIC,
    )
    return v, finite


def em_step(ens: ParticleEnsemble, p: CboParams, f: Objective) -> ParticleEnsemble:
    """Advance the ensemble by one Euler-Maruyama step of size ``p.dt``.

    Returns a new ensemble sharing the (advanced) generator with ``ens``.
    """
    X = np.array(ens.positions, dtype=float, order="C", copy=True)
    always_one = p.heaviside_mode is HeavisideMode.ALWAYS_ONE
    _, finite = _advance(X, p, f, ens.rng, always_one)
    if not finite:
        raise DivergedRunError(ens.step + 1)
    return replace(ens, positions=X, time=ens.time + p.dt, step=ens.step + 1)


def n_steps_for(T: float, dt: float) -> int:
    """``ceil(T / dt)``, tolerant of representation error in the quotient."""
    if T < 0:
        raise ConfigError("final time must be non-negative")
    q = T / dt
    n = math.ceil(q)
    if n - q > 1.0 - 1e-9:
        n -= 1
    return int(n)


@dataclass
class TrajectoryOptions:
    """What :func:`run_trajectory` records besides the final state."""

    stride: int = 10
    keep_positions: bool = True
    track_w1: bool | None = None  # default: on for d = 1 with a known minimizer
    x_star: np.ndarray | None = None  # overrides the objective's known minimizer
    extra: dict = field(default_factory=dict)


def run_trajectory(
    init: InitDistribution,
    p: CboParams,
    f: Objective,
    T: float,
    seed: int,
    N: int,
    options: TrajectoryOptions | None = None,
) -> RunRecord:
    """Simulate ``ceil(T/dt)`` steps from a seeded initial ensemble.

    Raises :class:`DivergedRunError` if any position becomes non-finite.
    """
    opts = options or TrajectoryOptions()
    if opts.stride < 1:
        raise ConfigError("recording stride must be >= 1")
    t0 = _time.perf_counter()
    d = f.dim
    ens = ParticleEnsemble.initial(init, N, d, seed)
    X = ens.positions
    rng = ens.rng
    n_steps = n_steps_for(T, p.dt)
    always_one = p.heaviside_mode is HeavisideMode.ALWAYS_ONE

    x_star = opts.x_star if opts.x_star is not None else f.known_minimizer
    track_w1 = opts.track_w1
    if track_w1 is None:
        track_w1 = d == 1 and x_star is not None

    rec_idx = set(range(0, n_steps + 1, opts.stride))
    rec_idx.add(n_steps)
    K = len(rec_idx)
    times = np.empty(K)
    vf_series = np.empty((K, d))
    var_series = np.empty(K)
    w1_series = np.empty(K) if track_w1 else None
    j = 0

    def snapshot():
        w1 = w1_to_dirac(X, float(np.asarray(x_star).ravel()[0])) if track_w1 else None
        return ensemble_variance(X), w1

    def store(step: int, v, snap):
        nonlocal j
        times[j] = step * p.dt
        vf_series[j] = v
        var_series[j] = snap[0]
        if track_w1:
            w1_series[j] = snap[1]
        j += 1

    n_evals = 0
    for k in range(n_steps):
        snap = snapshot() if k in rec_idx else None
        v, finite = _advance(X, p, f, rng, always_one)
        n_evals += N + (0 if always_one else 1)
        if snap is not None:
            store(k, v, snap)
        if not finite:
            raise DivergedRunError(k + 1)

    fX = f.evaluate(X)
    n_evals += N
    final = consensus_point(X, fX, p.alpha).location
    store(n_steps, final, snapshot())

    success = sq = None
    sq_series = None
    if x_star is not None:
        success, sq = success_and_distance(final, x_star, d)
        diff = vf_series - np.asarray(x_star, dtype=float)
        sq_series = np.sum(diff * diff, axis=1) / d
    return RunRecord(
        final_vf=final,
        seed=int(seed),
        times=times,
        vf_series=vf_series,
        variance_series=var_series,
        final_positions=X.copy() if opts.keep_positions else None,
        success=success,
        sq_dist_per_dim=sq,
        w1_series=w1_series,
        sq_dist_series=sq_series,
        wallclock=_time.perf_counter() - t0,
        n_steps=n_steps,
        n_evals=n_evals,
    )
