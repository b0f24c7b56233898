"""Measurement instruments for CBO runs.

Per-run quantities (W1 distance to a Dirac, ensemble variance, success flag,
Laplace functional) and the Monte-Carlo aggregation that turns a batch of
:class:`RunRecord` objects into :class:`SampleStatistics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AggregationError, EmptyEnsembleError

SUCCESS_HALF_WIDTH = 0.25


@dataclass
class RunRecord:
    """Outcome of one trajectory.

    ``success`` and ``sq_dist_per_dim`` are ``None`` when the objective has
    no known minimizer. Series are sampled at ``times``; ``w1_series`` is only
    filled for one-dimensional runs with a known minimizer.
    """

    final_vf: np.ndarray
    seed: int
    times: np.ndarray
    vf_series: np.ndarray
    variance_series: np.ndarray
    final_positions: np.ndarray | None = None
    success: bool | None = None
    sq_dist_per_dim: float | None = None
    w1_series: np.ndarray | None = None
    sq_dist_series: np.ndarray | None = None
    wallclock: float = 0.0
    n_steps: int = 0
    n_evals: int = 0
    diverged: bool = False
    error: str | None = None
    config_key: str = ""


@dataclass
class SampleStatistics:
    success_rate: float
    mean_sq_dist: float
    n_samples: int
    n_diverged: int = 0
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    # name -> (mean over samples, variance over samples), index-aligned with times
    series: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "mean_sq_dist": self.mean_sq_dist,
            "n_samples": self.n_samples,
            "n_diverged": self.n_diverged,
        }


def w1_to_dirac(positions, x_star: float) -> float:
    """W1 distance between the empirical measure of 1-D ``positions`` and ``δ_{x_star}``.

    Against a Dirac the inverse-CDF integral reduces to the mean absolute
    deviation from ``x_star``.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError("w1_to_dirac is only defined for one-dimensional ensembles")
        x = x[:, 0]
    if x.size == 0:
        raise EmptyEnsembleError("W1 distance of an empty ensemble")
    return float(np.mean(np.abs(x - float(x_star))))


def ensemble_variance(positions) -> float:
    """``(1/N^2) sum_{i,j} |X_i - X_j|^2``, computed in O(N d).

    Equals twice the summed per-coordinate (biased) variance.
    """
    X = np.asarray(positions, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise EmptyEnsembleError("variance of an empty ensemble")
    centred = X - X.mean(axis=0)
    return float(2.0 * np.sum(centred * centred) / X.shape[0])


def success_and_distance(final_vf, x_star, d: int | None = None) -> tuple[bool, float]:
    """Success iff ``final_vf`` lies in the open box of half-width 0.25 around ``x_star``.

    Also returns ``(1/d) |final_vf - x_star|^2``.
    """
    v = np.atleast_1d(np.asarray(final_vf, dtype=float))
    xs = np.atleast_1d(np.asarray(x_star, dtype=float))
    if d is None:
        d = v.size
    if v.size != d or xs.size != d:
        raise ValueError(f"dimension mismatch: vf {v.size}, x_star {xs.size}, d {d}")
    diff = v - xs
    ok = bool(np.all(np.abs(diff) < SUCCESS_HALF_WIDTH))
    return ok, float(np.dot(diff, diff) / d)


def laplace_value(fvalues, alpha: float, weights=None) -> float:
    """Finite-sample Laplace functional ``-(1/alpha) log( sum_i q_i exp(-alpha f_i) )``.

    ``q`` defaults to the uniform weights ``1/N``; pass quadrature masses to
    evaluate it for a density (they are normalised to sum to one). The value is
    computed as ``min f + D`` with ``D`` built from ``expm1``/``log1p`` so that
    it stays accurate when all ``f_i`` are close.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    f = np.asarray(fvalues, dtype=float).ravel()
    if f.size == 0:
        raise EmptyEnsembleError("Laplace value of an empty sample")
    if weights is None:
        q = np.full(f.size, 1.0 / f.size)
    else:
        q = np.asarray(weights, dtype=float).ravel()
        if np.any(q < 0) or q.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        q = q / q.sum()
    fmin = f.min()
    m = float(np.sum(q * np.expm1(-alpha * (f - fmin))))
    return float(fmin + (-math.log1p(m) / alpha))


def laplace_value_density(rho, f, alpha: float) -> float:
    """Laplace functional of a 1-D density field against objective ``f``."""
    x, wq, vals = rho.quadrature()
    mass = np.clip((wq * vals).ravel(), 0.0, None)
    fx = f.evaluate(x.reshape(-1, 1))
    return laplace_value(fx, alpha, weights=mass)


def aggregate(records) -> SampleStatistics:
    """Combine homogeneous run records.

    Diverged runs count as failures and are excluded from ``mean_sq_dist`` and
    from the series statistics.
    """
    records = list(records)
    if not records:
        raise AggregationError("no records to aggregate")
    keys = {r.config_key for r in records}
    if len(keys) > 1:
        raise AggregationError(f"records come from {len(keys)} different configurations")

    M = len(records)
    ok = [r for r in records if not r.diverged]
    n_success = sum(1 for r in ok if r.success)
    dists = [r.sq_dist_per_dim for r in ok if r.sq_dist_per_dim is not None]
    mean_sq = float(np.mean(dists)) if dists else float("nan")

    times = np.empty(0)
    series = {}
    if ok:
        times = ok[0].times
        lengths = {len(r.times) for r in ok}
        if len(lengths) > 1:
            raise AggregationError("records have different time grids")
        series["variance"] = _mean_var(np.stack([r.variance_series for r in ok]))
        if all(r.w1_series is not None for r in ok):
            series["w1"] = _mean_var(np.stack([r.w1_series for r in ok]))
        if all(r.sq_dist_series is not None for r in ok):
            series["sq_dist"] = _mean_var(np.stack([r.sq_dist_series for r in ok]))
    return SampleStatistics(
        success_rate=n_success / M,
        mean_sq_dist=mean_sq,
        n_samples=M,
        n_diverged=M - len(ok),
        times=np.asarray(times),
        series=series,
    )


def _mean_var(stack: np.ndarray):
    return stack.mean(axis=0), stack.var(axis=0)
