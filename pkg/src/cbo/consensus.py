"""Gibbs-weighted consensus point of an ensemble or a density.

The weights ``exp(-alpha f)`` are shifted by ``min f`` before
exponentiation. The shift cancels in the quotient and keeps the largest weight
at exactly one, so alpha * (max f - min f) can be in the thousands without
underflowing the denominator. All sums are pairwise (tree) reductions in a
fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import jit, select
from .errors import DegenerateDensityError, EmptyEnsembleError, InvalidObjectiveError


@dataclass(frozen=True)
class ConsensusPoint:
    location: np.ndarray
    log_normalizer: float  # log sum_i exp(-alpha f_i), evaluated stably
    alpha: float


# -- pairwise summation -------------------------------------------------------


@jit
def _tree_rows_nb(A):
    """Sum the rows of ``A`` pairwise, in place. Returns row 0."""
    n, m = A.shape
    while n > 1:
        h = n // 2
        for i in range(h):
            for k in range(m):
                A[i, k] = A[2 * i, k] + A[2 * i + 1, k]
        if n & 1:
            for k in range(m):
                A[h, k] = A[n - 1, k]
        n = h + (n & 1)
    return A[0].copy()


def _tree_rows_np(A):
    n = A.shape[0]
    while n > 1:
        h = n // 2
        paired = A[0 : 2 * h : 2] + A[1 : 2 * h : 2]
        if n & 1:
            A[h] = A[n - 1]
        A[:h] = paired
        n = h + (n & 1)
    return A[0].copy()


tree_sum_rows = select(_tree_rows_nb, _tree_rows_np)


def pairwise_sum(values) -> np.ndarray:
    """Pairwise sum over the leading axis (rows)."""
    A = np.array(values, dtype=float, copy=True)
    if A.ndim == 1:
        return tree_sum_rows(A.reshape(-1, 1))[0]
    return tree_sum_rows(np.ascontiguousarray(A))


# -- weighted mean kernel ------------------------------------------------------


@jit
def _weighted_mean_nb(X, fX, alpha):
    n, d = X.shape
    fmin = fX[0]
    for i in range(1, n):
        if fX[i] < fmin:
            fmin = fX[i]
    A = np.empty((n, d + 1))
    for i in range(n):
        w = math.exp(-alpha * (fX[i] - fmin))
        for k in range(d):
            A[i, k] = w * X[i, k]
        A[i, d] = w
    s = _tree_rows_nb(A)
    v = s[:d] / s[d]
    return v, math.log(s[d]) - alpha * fmin


def _weighted_mean_np(X, fX, alpha):
    fmin = fX.min()
    w = np.exp(-alpha * (fX - fmin))
    A = np.empty((X.shape[0], X.shape[1] + 1))
    A[:, :-1] = w[:, None] * X
    A[:, -1] = w
    s = _tree_rows_np(A)
    return s[:-1] / s[-1], math.log(s[-1]) - alpha * fmin


weighted_mean = select(_weighted_mean_nb, _weighted_mean_np)


def consensus_point(positions, fvalues, alpha: float) -> ConsensusPoint:
    """Weighted average ``sum_i X_i w_i / sum_i w_i`` with ``w_i = exp(-alpha f_i)``.

    ``positions`` has shape ``(N, d)`` (a 1-D array is read as ``d = 1``).
    ``alpha = 0`` is allowed and gives the plain mean.
    """
    X = np.asarray(positions, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    fX = np.asarray(fvalues, dtype=float).reshape(-1)
    if X.shape[0] == 0:
        raise EmptyEnsembleError("consensus point of an empty ensemble")
    if fX.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} positions but {fX.shape[0]} function values")
    if not np.all(np.isfinite(fX)):
        raise InvalidObjectiveError("objective returned non-finite values")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    v, lognorm = weighted_mean(np.ascontiguousarray(X), fX, float(alpha))
    return ConsensusPoint(location=v, log_normalizer=float(lognorm), alpha=float(alpha))


def consensus_point_density(rho, f, alpha: float) -> float:
    """Consensus point of a 1-D density ``rho`` (a ``DensityField1D``).

    Integrals are evaluated with the field's per-cell Gauss-Legendre rule.
    Small negative quadrature values from DG undershoot enter with their sign.
    """
    if rho.mass() <= 0.0:
        raise DegenerateDensityError("density has non-positive total mass")
    x, wq, vals = rho.quadrature()
    x = x.ravel()
    s = (wq * vals).ravel()
    nz = s != 0.0
    if not np.any(nz):
        raise DegenerateDensityError("density vanishes at every quadrature node")
    x, s = x[nz], s[nz]
    fx = f.evaluate(x[:, None])
    if not np.all(np.isfinite(fx)):
        raise InvalidObjectiveError("objective returned non-finite values")
    g = -alpha * fx + np.log(np.abs(s))
    q = np.sign(s) * np.exp(g - g.max())
    sums = pairwise_sum(np.column_stack((q * x, q)))
    if sums[1] <= 0.0:
        raise DegenerateDensityError("weighted mass is non-positive")
    return float(sums[0] / sums[1])
