"""One-dimensional mean-field solver.

The density obeys a nonlocal degenerate Fokker-Planck equation

    d_t rho + d_x(mu[rho] rho) = d_xx(kappa[rho] rho),
    mu[rho](x)    = -lam (x - v) H(f(x) - f(v)),
    kappa[rho](x) = sigma^2 (x - v)^2,          v = v_f[rho],

i.e. the law of a particle following the CBO drift with velocity ``mu``.
Space is discretised with modal (Legendre) discontinuous Galerkin elements on a
uniform grid; time with Strang splitting:

1. half step of convection with ``mu`` frozen from the previous density,
   explicit SSP-RK3 with the local Lax-Friedrichs (upwind) flux, sub-cycled so
   every stage respects the DG stability limit;
2. one semi-implicit diffusion step, ``kappa`` frozen from the intermediate
   density, interior-penalty fluxes acting on ``kappa * rho``;
3. a second convection half step.

Both boundaries carry zero flux, so total mass is conserved to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre as L
from scipy.linalg import solve_banded
from scipy.sparse import coo_matrix
from scipy.special import erf

from ._accel import jit, select
from .consensus import pairwise_sum
from .dynamics import CboParams, HeavisideMode
from .errors import (
    DegenerateDensityError,
    NonConvergenceError,
    PositivityError,
    SolverError,
    StepSizeError,
)

log = logging.getLogger(__name__)

CFL_SAFETY = 0.9
SUPPORT_THRESHOLD = 1e-6


class Basis:
    """Legendre basis of degree ``p`` on the reference cell [-1, 1]."""

    def __init__(self, p: int, nq: int | None = None):
        if p < 0:
            raise ValueError("polynomial degree must be non-negative")
        self.p = p
        self.nq = nq if nq is not None else p + 2
        self.xi, self.wq = L.leggauss(self.nq)
        eye = np.eye(p + 1)
        # V[q, k] = P_k(xi_q), D[q, k] = P_k'(xi_q)
        self.V = L.legvander(self.xi, p)
        self.D = np.column_stack([L.legval(self.xi, L.legder(eye[k])) for k in range(p + 1)])
        k = np.arange(p + 1)
        self.right = np.ones(p + 1)  # P_k(1)
        self.left = (-1.0) ** k  # P_k(-1)
        self.dright = k * (k + 1) / 2.0  # P_k'(1)
        self.dleft = (-1.0) ** (k + 1) * k * (k + 1) / 2.0  # P_k'(-1)
        self.mass = 2.0 / (2 * k + 1)  # reference mass matrix diagonal


@dataclass(frozen=True)
class Grid:
    a: float
    b: float
    ncells: int

    def __post_init__(self):
        if not self.b > self.a or self.ncells < 1:
            raise ValueError("grid needs a < b and at least one cell")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.ncells

    @cached_property
    def edges(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.ncells + 1)

    @cached_property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def nodes(self, basis: Basis) -> np.ndarray:
        return self.centers[:, None] + 0.5 * self.h * basis.xi[None, :]

    @classmethod
    def with_spacing(cls, a: float, b: float, h: float) -> "Grid":
        n = int(round((b - a) / h))
        if n < 1 or not math.isclose(n * h, b - a, rel_tol=1e-9):
            raise ValueError(f"spacing {h} does not divide [{a}, {b}]")
        return cls(a, b, n)


@dataclass
class DensityField1D:
    """Piecewise polynomial density: ``coeffs[j, k]`` multiplies ``P_k`` on cell ``j``."""

    grid: Grid
    basis: Basis
    coeffs: np.ndarray

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def poly_degree(self) -> int:
        return self.basis.p

    @property
    def domain(self) -> tuple[float, float]:
        return self.grid.a, self.grid.b

    def copy(self) -> "DensityField1D":
        return DensityField1D(self.grid, self.basis, self.coeffs.copy())

    def with_coeffs(self, coeffs) -> "DensityField1D":
        return DensityField1D(self.grid, self.basis, coeffs)

    def cell_averages(self) -> np.ndarray:
        return self.coeffs[:, 0].copy()

    def mass(self) -> float:
        return float(pairwise_sum(self.coeffs[:, 0]) * self.h)

    def quadrature(self):
        """Nodes, physical weights and density values, each of shape ``(ncells, nq)``."""
        x = self.grid.nodes(self.basis)
        w = np.broadcast_to(0.5 * self.h * self.basis.wq, x.shape)
        return x, w, self.coeffs @ self.basis.V.T

    def l2_norm(self) -> float:
        return l2_norm(self.coeffs, self.basis, self.h)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        j = np.clip(((x - self.grid.a) / self.h).astype(int), 0, self.grid.ncells - 1)
        xi = 2.0 * (x - self.grid.centers[j]) / self.h
        P = L.legvander(xi, self.basis.p)
        return np.sum(P * self.coeffs[j], axis=-1)

    def mean(self) -> float:
        x, w, vals = self.quadrature()
        return float(np.sum(x * w * vals) / np.sum(w * vals))

    def variance(self) -> float:
        """``∬ |x - y|^2 rho(x) rho(y) dx dy`` for the normalised density."""
        x, w, vals = self.quadrature()
        m = np.sum(w * vals)
        mu1 = np.sum(x * w * vals) / m
        return float(2.0 * np.sum((x - mu1) ** 2 * w * vals) / m)

    def support(self, threshold: float = SUPPORT_THRESHOLD) -> tuple[float, float] | None:
        """Hull of the cells in which the density exceeds ``threshold`` somewhere.

        The density is sampled at both cell ends and at the quadrature nodes.
        """
        B = self.basis
        samples = np.concatenate([B.V, B.left[None, :], B.right[None, :]])
        peak = (self.coeffs @ samples.T).max(axis=1)
        idx = np.flatnonzero(peak > threshold)
        if idx.size == 0:
            return None
        e = self.grid.edges
        return float(e[idx[0]]), float(e[idx[-1] + 1])

    # -- construction -----------------------------------------------------

    @classmethod
    def project(cls, fn, grid: Grid, degree: int = 1, nq: int | None = None) -> "DensityField1D":
        """L2 projection of ``fn`` onto the DG space, using a high-order rule."""
        basis = Basis(degree)
        nfine = max(nq or 0, degree + 6)
        xi, wq = L.leggauss(nfine)
        x = grid.centers[:, None] + 0.5 * grid.h * xi[None, :]
        vals = np.asarray(fn(x), dtype=float)
        V = L.legvander(xi, degree)
        coeffs = (vals * wq) @ V / basis.mass
        return cls(grid, basis, coeffs)

    @classmethod
    def uniform(cls, grid: Grid, lo: float, hi: float, degree: int = 1) -> "DensityField1D":
        """Normalised indicator of ``[lo, hi]`` (cells must align with the bounds)."""
        val = 1.0 / (hi - lo)
        coeffs = np.zeros((grid.ncells, degree + 1))
        inside = (grid.centers > lo) & (grid.centers < hi)
        coeffs[inside, 0] = val
        return cls(grid, Basis(degree), coeffs)


def l2_norm(coeffs: np.ndarray, basis: Basis, h: float) -> float:
    return float(math.sqrt(np.sum(coeffs * coeffs * (0.5 * h * basis.mass))))


# --------------------------------------------------------------------------
# field coefficients


@dataclass
class FieldCoefficients:
    """Drift and diffusion fields sampled where the DG operators need them.

    ``*_q`` arrays live on quadrature nodes ``(ncells, nq)``, ``*_f`` arrays on
    cell faces ``(ncells + 1,)``.
    """

    mu_q: np.ndarray
    mu_f: np.ndarray
    kappa_q: np.ndarray
    dkappa_q: np.ndarray
    kappa_f: np.ndarray
    dkappa_f: np.ndarray
    vf: float = float("nan")

    def max_speed(self) -> float:
        return float(max(np.max(np.abs(self.mu_q)), np.max(np.abs(self.mu_f))))

    @classmethod
    def from_functions(cls, grid: Grid, basis: Basis, mu=None, kappa=None, dkappa=None, vf=float("nan")):
        """Sample arbitrary callables. Missing fields are zero."""
        xq = grid.nodes(basis)
        xf = grid.edges

        def sample(fn, x):
            if fn is None:
                return np.zeros_like(x)
            return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape).copy()

        return cls(
            mu_q=sample(mu, xq),
            mu_f=sample(mu, xf),
            kappa_q=sample(kappa, xq),
            dkappa_q=sample(dkappa, xq),
            kappa_f=sample(kappa, xf),
            dkappa_f=sample(dkappa, xf),
            vf=vf,
        )


class _ObjectiveCache:
    """Objective values on the fixed quadrature nodes and faces of a grid."""

    def __init__(self, grid: Grid, basis: Basis, f):
        self.f = f
        self.xq = grid.nodes(basis)
        self.xf = grid.edges
        self.fq = f.evaluate(self.xq.reshape(-1, 1)).reshape(self.xq.shape)
        self.ff = f.evaluate(self.xf[:, None])
        self.wq = np.broadcast_to(0.5 * grid.h * basis.wq, self.xq.shape)
        if not (np.all(np.isfinite(self.fq)) and np.all(np.isfinite(self.ff))):
            raise ValueError("objective is not finite on the grid")

    def consensus(self, rho: DensityField1D, alpha: float) -> float:
        vals = rho.coeffs @ rho.basis.V.T
        return _density_consensus(self.xq, self.wq, vals, self.fq, alpha)


def _density_consensus(x, wq, vals, fvals, alpha):
    s = (wq * vals).ravel()
    nz = s != 0.0
    if not np.any(nz):
        raise DegenerateDensityError("density vanishes at every quadrature node")
    x = x.ravel()[nz]
    s = s[nz]
    g = -alpha * fvals.ravel()[nz] + np.log(np.abs(s))
    q = np.sign(s) * np.exp(g - g.max())
    sums = pairwise_sum(np.column_stack((q * x, q)))
    if sums[1] <= 0.0:
        raise DegenerateDensityError("weighted mass is non-positive")
    return float(sums[0] / sums[1])


def drift_field(cache: _ObjectiveCache, vf: float, p: CboParams):
    fv = cache.f(np.array([vf]))

    def mu(x, fx):
        if p.heaviside_mode is HeavisideMode.ALWAYS_ONE:
            return -p.lam * (x - vf)
        return -p.lam * (x - vf) * (0.5 * erf((fx - fv) / p.epsilon) + 0.5)

    return mu(cache.xq, cache.fq), mu(cache.xf, cache.ff)


def diffusion_field(cache: _ObjectiveCache, vf: float, sigma: float):
    s2 = sigma * sigma
    return (
        s2 * (cache.xq - vf) ** 2,
        2.0 * s2 * (cache.xq - vf),
        s2 * (cache.xf - vf) ** 2,
        2.0 * s2 * (cache.xf - vf),
    )


def fields_from_density(rho: DensityField1D, f, p: CboParams, cache: _ObjectiveCache | None = None):
    """Drift and diffusion fields generated by the consensus point of ``rho``."""
    cache = cache or _ObjectiveCache(rho.grid, rho.basis, f)
    vf = cache.consensus(rho, p.alpha)
    mu_q, mu_f = drift_field(cache, vf, p)
    kq, dkq, kf, dkf = diffusion_field(cache, vf, p.sigma)
    return FieldCoefficients(mu_q, mu_f, kq, dkq, kf, dkf, vf=vf)


# --------------------------------------------------------------------------
# convection


@jit
def _convection_rhs_nb(c, mu_q, mu_f, V, D, wq, right, left, inv_mass):
    nc, nb = c.shape
    nq = V.shape[0]
    out = np.zeros((nc, nb))
    # volume term: sum_q w_q mu_q rho_q P_m'(xi_q)
    for j in range(nc):
        for q in range(nq):
            r = 0.0
            for k in range(nb):
                r += c[j, k] * V[q, k]
            r *= wq[q] * mu_q[j, q]
            for m in range(nb):
                out[j, m] += r * D[q, m]
    # interior faces, upwind / local Lax-Friedrichs
    for j in range(nc - 1):
        uL = 0.0
        uR = 0.0
        for k in range(nb):
            uL += c[j, k] * right[k]
            uR += c[j + 1, k] * left[k]
        a = mu_f[j + 1]
        F = 0.5 * a * (uL + uR) + 0.5 * abs(a) * (uL - uR)
        for m in range(nb):
            out[j, m] -= F * right[m]
            out[j + 1, m] += F * left[m]
    for j in range(nc):
        for m in range(nb):
            out[j, m] *= inv_mass[m]
    return out


def _convection_rhs_np(c, mu_q, mu_f, V, D, wq, right, left, inv_mass):
    vals = c @ V.T
    out = (vals * mu_q * wq) @ D
    uL = c[:-1] @ right
    uR = c[1:] @ left
    a = mu_f[1:-1]
    F = 0.5 * a * (uL + uR) + 0.5 * np.abs(a) * (uL - uR)
    out[:-1] -= F[:, None] * right[None, :]
    out[1:] += F[:, None] * left[None, :]
    return out * inv_mass


convection_rhs_kernel = select(_convection_rhs_nb, _convection_rhs_np)


def rk_cfl_limit(p: int) -> float:
    """Courant number used for each SSP-RK3 stage of degree-``p`` DG."""
    return 0.9 / (2 * p + 1)


def convection_rhs(rho: DensityField1D, mu: FieldCoefficients) -> np.ndarray:
    B = rho.basis
    inv_mass = 2.0 / (rho.h * B.mass)
    return convection_rhs_kernel(
        rho.coeffs, mu.mu_q, mu.mu_f, B.V, B.D, B.wq, B.right, B.left, inv_mass
    )


def convection_halfstep(rho: DensityField1D, mu: FieldCoefficients, tau: float, limiter: bool = False):
    """Advance ``d_t rho + d_x(mu rho) = 0`` by ``tau / 2``.

    ``tau`` must satisfy the splitting CFL condition ``tau * max|mu| < h``.
    The half step is split into SSP-RK3 sub-steps whose Courant number stays
    below :func:`rk_cfl_limit`.
    """
    if tau < 0:
        raise StepSizeError("negative time step")
    speed = mu.max_speed()
    h = rho.h
    if tau * speed >= h:
        raise StepSizeError(f"tau={tau:.3e} violates CFL: tau * max|mu| = {tau * speed:.3e} >= h = {h:.3e}")
    half = 0.5 * tau
    if speed == 0.0 or half == 0.0:
        return rho.copy()
    nsub = max(1, math.ceil(half * speed / (h * rk_cfl_limit(rho.basis.p)) - 1e-12))
    dt = half / nsub
    B = rho.basis
    inv_mass = 2.0 / (h * B.mass)
    args = (mu.mu_q, mu.mu_f, B.V, B.D, B.wq, B.right, B.left, inv_mass)
    c = rho.coeffs
    for _ in range(nsub):
        c1 = c + dt * convection_rhs_kernel(c, *args)
        if limiter:
            c1 = minmod_limit(c1, h)
        c2 = 0.75 * c + 0.25 * (c1 + dt * convection_rhs_kernel(c1, *args))
        if limiter:
            c2 = minmod_limit(c2, h)
        c = c / 3.0 + (2.0 / 3.0) * (c2 + dt * convection_rhs_kernel(c2, *args))
        if limiter:
            c = minmod_limit(c, h)
    return rho.with_coeffs(c)


def minmod_limit(c: np.ndarray, h: float) -> np.ndarray:
    """Minmod slope limiter; limited cells drop to linear."""
    if c.shape[1] < 2:
        return c
    avg = c[:, 0]
    fwd = np.zeros_like(avg)
    bwd = np.zeros_like(avg)
    fwd[:-1] = avg[1:] - avg[:-1]
    bwd[1:] = avg[1:] - avg[:-1]
    slope = c[:, 1]
    s = np.sign(slope)
    lim = s * np.minimum.reduce([np.abs(slope), np.abs(fwd), np.abs(bwd)])
    lim = np.where((s == np.sign(fwd)) & (s == np.sign(bwd)), lim, 0.0)
    changed = lim != slope
    out = c.copy()
    out[:, 1] = lim
    if c.shape[1] > 2:
        out[changed, 2:] = 0.0
    return out


# --------------------------------------------------------------------------
# diffusion


@dataclass
class DiffusionOptions:
    # coefficient of the [[kappa rho]][[phi]] term; None means (p + 1)^2.
    # The unscaled coefficient 1 gives an indefinite operator on fine grids.
    penalty: float | None = None
    penalty_scaled: bool = True  # divide the penalty by h
    theta: float = 1.0  # 1: backward Euler, 0.5: Crank-Nicolson
    residual_tol: float = 1e-10


def assemble_diffusion(grid: Grid, basis: Basis, kappa: FieldCoefficients, opts: DiffusionOptions):
    """Interior-penalty matrix ``A`` with ``(A c)_i = a(rho_c, phi_i)`` for ``-d_xx(kappa rho)``.

    Returns COO triplets ``(rows, cols, vals)``.
    """
    nb = basis.p + 1
    nc = grid.ncells
    h = grid.h
    sx = 2.0 / h  # d xi / dx
    # volume: int (kappa psi_n)' psi_m' dx
    kq, dkq = kappa.kappa_q, kappa.dkappa_q
    wq = 0.5 * h * basis.wq
    dpsi = basis.D * sx  # (nq, nb)
    trial = dkq[:, :, None] * basis.V[None, :, :] + kq[:, :, None] * dpsi[None, :, :]  # (nc, nq, nb)
    vol = np.einsum("q,jqn,qm->jmn", wq, trial, dpsi)
    dof = np.arange(nc * nb).reshape(nc, nb)
    rows = [np.repeat(dof[:, :, None], nb, axis=2).ravel()]
    cols = [np.repeat(dof[:, None, :], nb, axis=1).ravel()]
    vals = [vol.ravel()]

    eta = float((basis.p + 1) ** 2) if opts.penalty is None else opts.penalty
    if opts.penalty_scaled:
        eta /= h
    kf = kappa.kappa_f[1:-1]
    dkf = kappa.dkappa_f[1:-1]
    nf = nc - 1
    if nf > 0:
        trace = {0: basis.right, 1: basis.left}  # side 0 = left cell (xi=+1), side 1 = right cell (xi=-1)
        dtrace = {0: basis.dright * sx, 1: basis.dleft * sx}
        sign = {0: 1.0, 1: -1.0}
        for r in (0, 1):
            for s in (0, 1):
                t_r, t_s = trace[r], trace[s]
                jump_test = sign[r] * t_r  # (nb,)
                avg_dtest = 0.5 * dtrace[r]
                avg_dw = 0.5 * (dkf[:, None] * t_s[None, :] + kf[:, None] * dtrace[s][None, :])  # (nf, nb)
                jump_w = sign[s] * kf[:, None] * t_s[None, :]  # (nf, nb)
                blk = (
                    -avg_dw[:, None, :] * jump_test[None, :, None]
                    - avg_dtest[None, :, None] * jump_w[:, None, :]
                    + eta * jump_w[:, None, :] * jump_test[None, :, None]
                )  # (nf, m, n)
                rc = dof[r : r + nf]
                cc = dof[s : s + nf]
                rows.append(np.repeat(rc[:, :, None], nb, axis=2).ravel())
                cols.append(np.repeat(cc[:, None, :], nb, axis=1).ravel())
                vals.append(blk.ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def diffusion_step(
    rho: DensityField1D, kappa: FieldCoefficients, tau: float, opts: DiffusionOptions | None = None
) -> DensityField1D:
    """One theta-step of ``d_t rho = d_xx(kappa rho)`` with ``kappa`` frozen."""
    opts = opts or DiffusionOptions()
    if np.any(kappa.kappa_q < 0) or np.any(kappa.kappa_f < 0):
        raise ValueError("diffusion coefficient must be non-negative")
    if tau == 0.0:
        return rho.copy()
    grid, basis = rho.grid, rho.basis
    nb = basis.p + 1
    n = grid.ncells * nb
    r, c, v = assemble_diffusion(grid, basis, kappa, opts)
    mdiag = np.tile(0.5 * grid.h * basis.mass, grid.ncells)
    u0 = rho.coeffs.ravel()
    A = coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    rhs = mdiag * u0
    if opts.theta != 1.0:
        rhs = rhs - (1.0 - opts.theta) * tau * (A @ u0)
    bw = 2 * nb - 1
    ab = np.zeros((2 * bw + 1, n))
    np.add.at(ab, (bw + r - c, c), opts.theta * tau * v)
    ab[bw] += mdiag
    try:
        u = solve_banded((bw, bw), ab, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"diffusion system is singular: {exc}", _cond(A, mdiag, opts.theta * tau)) from exc
    lhs_u = mdiag * u + opts.theta * tau * (A @ u)
    res = np.linalg.norm(lhs_u - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.isfinite(res) or res > opts.residual_tol:
        raise SolverError(f"diffusion solve residual {res:.3e}", _cond(A, mdiag, opts.theta * tau))
    return rho.with_coeffs(u.reshape(grid.ncells, nb))


def _cond(A, mdiag, s):
    dense = np.diag(mdiag) + s * A.toarray()
    if not np.all(np.isfinite(dense)):
        return float("nan")
    try:
        return float(np.linalg.cond(dense))
    except np.linalg.LinAlgError:
        return float("inf")


# --------------------------------------------------------------------------
# splitting and driver


def step_size(rho: DensityField1D, mu: FieldCoefficients, h: float | None = None, tau_max: float = 0.1) -> float:
    """``0.9 h / max|mu|``, capped at ``tau_max``."""
    h = rho.h if h is None else h
    speed = mu.max_speed()
    if speed == 0.0:
        return tau_max
    return min(CFL_SAFETY * h / speed, tau_max)


@dataclass
class MeanFieldOptions:
    tau_max: float = 0.1
    limiter: bool = False
    diffusion: DiffusionOptions = field(default_factory=DiffusionOptions)
    positivity_warn: float = 1e-8  # relative to the largest cell average
    positivity_abort: float = 1e-4
    max_iter: int | None = None
    t_expected: float = 100.0
    record_every: int = 1
    snapshot_times: tuple = ()


def strang_step(
    rho, f, p: CboParams, tau: float, opts: MeanFieldOptions | None = None, cache=None, vf=None
):
    """One Strang step: convection ``tau/2``, diffusion ``tau``, convection ``tau/2``.

    ``mu`` comes from the incoming density, ``kappa`` from the density after the
    first half step. Returns ``(rho_new, vf_in)`` where ``vf_in`` is the
    consensus point of the incoming density (pass it as ``vf`` if already known).
    """
    opts = opts or MeanFieldOptions()
    cache = cache or _ObjectiveCache(rho.grid, rho.basis, f)
    if vf is None:
        vf = cache.consensus(rho, p.alpha)
    mu_q, mu_f = drift_field(cache, vf, p)
    zq, zf = np.zeros_like(mu_q), np.zeros_like(mu_f)
    mu = FieldCoefficients(mu_q, mu_f, zq, zq, zf, zf, vf=vf)
    rho_s = convection_halfstep(rho, mu, tau, limiter=opts.limiter)
    vf_s = cache.consensus(rho_s, p.alpha)
    kq, dkq, kf, dkf = diffusion_field(cache, vf_s, p.sigma)
    kappa = FieldCoefficients(zq, zq, kq, dkq, kf, dkf, vf=vf_s)
    rho_ss = diffusion_step(rho_s, kappa, tau, opts.diffusion)
    return convection_halfstep(rho_ss, mu, tau, limiter=opts.limiter), vf


@dataclass
class MeanFieldResult:
    rho: DensityField1D
    stop_time: float
    support: tuple[float, float] | None
    n_steps: int
    times: np.ndarray
    vf_series: np.ndarray
    increments: np.ndarray
    mass_drift: float
    min_relative_average: float
    snapshots: list = field(default_factory=list)  # (t, cell averages)


def solve_to_stationarity(
    rho0: DensityField1D,
    f,
    p: CboParams,
    tol: float = 1e-3,
    opts: MeanFieldOptions | None = None,
) -> MeanFieldResult:
    """Iterate Strang steps until ``|rho_k - rho_{k-1}|_L2 < tau_k * tol``.

    Raises :class:`NonConvergenceError` (with the partial result attached) when
    the iteration guard is hit.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    opts = opts or MeanFieldOptions()
    cache = _ObjectiveCache(rho0.grid, rho0.basis, f)
    rho = rho0.copy()
    m0 = rho.mass()
    if m0 <= 0:
        raise DegenerateDensityError("initial density has non-positive mass")
    h = rho.h
    a, b = rho.domain
    tau_min = CFL_SAFETY * h / (p.lam * (b - a))
    max_iter = opts.max_iter or int(10 * opts.t_expected / tau_min)

    t = 0.0
    times, vfs, incs = [], [], []
    snaps = []
    pending = sorted(opts.snapshot_times)
    if pending and pending[0] <= 0.0:
        snaps.append((0.0, rho.cell_averages()))
        pending = [s for s in pending if s > 0.0]
    worst = 0.0
    for k in range(1, max_iter + 1):
        vf = cache.consensus(rho, p.alpha)
        mu_q, mu_f = drift_field(cache, vf, p)
        speed = max(np.max(np.abs(mu_q)), np.max(np.abs(mu_f)))
        tau = opts.tau_max if speed == 0.0 else min(CFL_SAFETY * h / speed, opts.tau_max)
        new, _ = strang_step(rho, f, p, tau, opts, cache, vf=vf)
        inc = l2_norm(new.coeffs - rho.coeffs, rho.basis, h)
        rho = new
        t += tau
        avgs = rho.coeffs[:, 0]
        rel = float(avgs.min() / avgs.max())
        worst = min(worst, rel)
        if rel < -opts.positivity_abort:
            raise PositivityError(f"cell average undershoot {rel:.3e} (relative) at t={t:.4f}")
        if rel < -opts.positivity_warn and rel <= worst:
            log.warning("negative cell average %.3e (relative) at t=%.4f", rel, t)
        if k % opts.record_every == 0:
            times.append(t)
            vfs.append(vf)
            incs.append(inc)
        while pending and t >= pending[0]:
            snaps.append((t, rho.cell_averages()))
            pending.pop(0)
        if inc < tau * tol:
            break
    else:
        partial = _result(rho, t, k, times, vfs, incs, m0, worst, snaps)
        raise NonConvergenceError(
            f"no stationarity after {max_iter} steps (t={t:.3f})",
            diagnostics={"t": t, "last_increment": inc, "tau": tau},
            partial=partial,
        )
    return _result(rho, t, k, times, vfs, incs, m0, worst, snaps)


def _result(rho, t, k, times, vfs, incs, m0, worst, snaps):
    return MeanFieldResult(
        rho=rho,
        stop_time=t,
        support=rho.support(),
        n_steps=k,
        times=np.asarray(times),
        vf_series=np.asarray(vfs),
        increments=np.asarray(incs),
        mass_drift=abs(rho.mass() - m0) / m0,
        min_relative_average=worst,
        snapshots=snaps + [(t, rho.cell_averages())],
    )
