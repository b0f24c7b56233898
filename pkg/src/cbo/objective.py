"""Objective-function contract and the benchmark landscapes.

An :class:`Objective` wraps a *batch* evaluator mapping an ``(N, d)`` array of
points to ``N`` function values. Benchmarks carry their known minimizer so the
harness can score runs against it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._accel import jit, select
from .errors import ConfigError

TWO_PI = 2.0 * math.pi
E = math.e

# root of 0.8 x^3 - 4 x + 0.5 in the left well
DOUBLE_WELL_MINIMIZER = -2.296126636411035


# --------------------------------------------------------------------------
# scalar reference formulas (single point, plain numpy)


def ackley(x, B: float = 0.0, C: float = 0.0) -> float:
    """Shifted Ackley function; minimum value ``C`` at ``(B, ..., B)``."""
    z = np.atleast_1d(np.asarray(x, dtype=float)) - B
    d = z.size
    r = math.sqrt(float(np.dot(z, z)))
    s = float(np.sum(np.cos(TWO_PI * z)))
    return -20.0 * math.exp(-0.2 / math.sqrt(d) * r) - math.exp(s / d) + 20.0 + E + C


def rastrigin(x, B: float = 0.0, C: float = 0.0) -> float:
    """Dimension-averaged, shifted Rastrigin function; minimum ``C`` at ``(B, ..., B)``."""
    z = np.atleast_1d(np.asarray(x, dtype=float)) - B
    return float(np.mean(z * z - 10.0 * np.cos(TWO_PI * z) + 10.0)) + C


def double_well(x: float) -> float:
    return 0.2 * x**4 - 2.0 * x**2 + 0.5 * x + 10.0


# --------------------------------------------------------------------------
# batch kernels


@jit
def _ackley_batch_nb(X, B, C):
    n, d = X.shape
    out = np.empty(n)
    inv_sqrt_d = 1.0 / math.sqrt(d)
    for i in range(n):
        sq = 0.0
        cs = 0.0
        for k in range(d):
            z = X[i, k] - B
            sq += z * z
            cs += math.cos(TWO_PI * z)
        out[i] = (
            -20.0 * math.exp(-0.2 * inv_sqrt_d * math.sqrt(sq))
            - math.exp(cs / d)
            + 20.0
            + E
            + C
        )
    return out


def _ackley_batch_np(X, B, C):
    Z = X - B
    d = X.shape[1]
    r = np.sqrt(np.sum(Z * Z, axis=1))
    s = np.sum(np.cos(TWO_PI * Z), axis=1)
    return -20.0 * np.exp(-0.2 / math.sqrt(d) * r) - np.exp(s / d) + 20.0 + E + C


@jit
def _rastrigin_batch_nb(X, B, C):
    n, d = X.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for k in range(d):
            z = X[i, k] - B
            acc += z * z - 10.0 * math.cos(TWO_PI * z) + 10.0
        out[i] = acc / d + C
    return out


def _rastrigin_batch_np(X, B, C):
    Z = X - B
    return np.sum(Z * Z - 10.0 * np.cos(TWO_PI * Z) + 10.0, axis=1) / X.shape[1] + C


@jit
def _double_well_batch_nb(X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        x = X[i, 0]
        x2 = x * x
        out[i] = 0.2 * x2 * x2 - 2.0 * x2 + 0.5 * x + 10.0
    return out


def _double_well_batch_np(X):
    x = X[:, 0]
    x2 = x * x
    return 0.2 * x2 * x2 - 2.0 * x2 + 0.5 * x + 10.0


ackley_batch = select(_ackley_batch_nb, _ackley_batch_np)
rastrigin_batch = select(_rastrigin_batch_nb, _rastrigin_batch_np)
double_well_batch = select(_double_well_batch_nb, _double_well_batch_np)


# --------------------------------------------------------------------------
# contract


@dataclass(frozen=True, eq=False)
class Objective:
    """A deterministic, stateless objective ``f: R^d -> R``.

    ``batch`` receives a C-contiguous float array of shape ``(N, d)`` and must
    return ``N`` values. Use :meth:`from_pointwise` to adapt a scalar function.
    """

    batch: Callable[[np.ndarray], np.ndarray]
    dim: int
    known_minimizer: np.ndarray | None = None
    known_min_value: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"objective dimension must be positive, got {self.dim}")
        if self.known_minimizer is not None:
            xm = np.asarray(self.known_minimizer, dtype=float).reshape(self.dim)
            object.__setattr__(self, "known_minimizer", xm)

    def evaluate(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected points of shape (N, {self.dim}), got {X.shape}")
        return np.asarray(self.batch(X), dtype=float)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        return float(self.evaluate(x)[0])

    @classmethod
    def from_pointwise(cls, fn: Callable[[np.ndarray], float], dim: int, **kw) -> "Objective":
        def batch(X):
            return np.fromiter((fn(row) for row in X), dtype=float, count=X.shape[0])

        return cls(batch=batch, dim=dim, **kw)


def constant(value: float = 0.0, dim: int = 1) -> Objective:
    """``f ≡ value``; every point is a minimizer, so none is recorded."""

    def batch(X):
        return np.full(X.shape[0], float(value))

    return Objective(batch=batch, dim=dim, name="constant", params={"value": value})


class Family(str, enum.Enum):
    ACKLEY = "ackley"
    RASTRIGIN = "rastrigin"
    DOUBLE_WELL = "double_well"


@dataclass(frozen=True)
class BenchmarkSpec:
    family: Family
    shift_B: float = 0.0
    shift_C: float = 0.0
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.dim < 1:
            raise ConfigError("benchmark dimension must be positive")
        if self.family is Family.DOUBLE_WELL:
            if self.dim != 1:
                raise ConfigError("the double-well benchmark is one-dimensional")
            if self.shift_B != 0.0 or self.shift_C != 0.0:
                raise ConfigError("the double-well benchmark takes no shifts")

    def build(self) -> Objective:
        return make_benchmark(self.family, dim=self.dim, B=self.shift_B, C=self.shift_C)


def make_benchmark(family, dim: int = 1, B: float = 0.0, C: float = 0.0) -> Objective:
    family = Family(family)
    B = float(B)
    C = float(C)
    params = {"B": B, "C": C}
    if family is Family.ACKLEY:
        return Objective(
            batch=lambda X: ackley_batch(X, B, C),
            dim=dim,
            known_minimizer=np.full(dim, B),
            known_min_value=C,
            name="ackley",
            params=params,
        )
    if family is Family.RASTRIGIN:
        return Objective(
            batch=lambda X: rastrigin_batch(X, B, C),
            dim=dim,
            known_minimizer=np.full(dim, B),
            known_min_value=C,
            name="rastrigin",
            params=params,
        )
    if dim != 1 or B != 0.0 or C != 0.0:
        raise ConfigError("the double-well benchmark is one-dimensional and unshifted")
    return Objective(
        batch=double_well_batch,
        dim=1,
        known_minimizer=np.array([DOUBLE_WELL_MINIMIZER]),
        known_min_value=double_well(DOUBLE_WELL_MINIMIZER),
        name="double_well",
        params={},
    )
