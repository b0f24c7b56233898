"""Acceptance criteria, one verdict line each.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
Each test records PASS/FAIL with the measured numbers before asserting, so the
terminal summary lists every criterion even when some are red.
"""

import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

if __package__ in (None, ""):
    sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from cbo.diagnostics import laplace_value, laplace_value_density
from cbo.dynamics import CboParams, InitDistribution, ParticleEnsemble, em_step
from cbo.harness import presets, runner
from cbo.harness.config import Mode
from cbo.meanfield1d import (
    DensityField1D,
    DiffusionOptions,
    FieldCoefficients,
    Grid,
    MeanFieldOptions,
    _ObjectiveCache,
    convection_halfstep,
    diffusion_step,
    l2_norm,
    strang_step,
)
from cbo.objective import constant, make_benchmark
from tests.acceptance_log import record

MODES = ("smoothed_erf", "always_one")

# reported values, indexed by (x*, swept value)
TABLE1_MSD = {
    (0.0, 50): 5.21e-4, (0.0, 100): 1.18e-3, (0.0, 200): 2.47e-3,
    (1.0, 50): 5.23e-4, (1.0, 100): 1.21e-3, (1.0, 200): 2.55e-3,
    (2.0, 50): 5.46e-4, (2.0, 100): 1.24e-3, (2.0, 200): 2.57e-3,
}
MSD_FACTOR = 5.0
RUNTIME_LIMIT = 600.0
TABLE4_BANDS = {10.0: (0.0, 0.15), 30.0: (0.45, 0.75), 50.0: (0.95, 1.0)}
STOP_TIMES = {"fig3-ackley": 5.7, "fig3-ackley-shifted": 25.0, "fig3-rastrigin": 58.0, "fig3-rastrigin-shifted": 78.0}
STOP_TOL = 0.30


def _with_mode(cfg, mode):
    return replace(cfg, cbo=replace(cfg.cbo, heaviside_mode=mode))


# -- 1 --------------------------------------------------------------------------


@pytest.mark.parametrize("mode", MODES)
def test_criterion_1_table1(mode):
    cfg = _with_mode(presets.preset_config("table1"), mode)
    t0 = time.perf_counter()
    archives = runner.run_sweep(cfg, write=False)
    elapsed = time.perf_counter() - t0
    cells, ok = [], True
    for (assign, _), a in zip(cfg.sweep_points(), archives):
        ref = TABLE1_MSD[(assign["shift_B"], assign["N"])]
        s = a.stats
        in_band = ref / MSD_FACTOR <= s.mean_sq_dist <= ref * MSD_FACTOR
        ok &= s.success_rate == 1.0 and in_band
        cells.append(f"N{assign['N']}/x{assign['shift_B']:g}: {100 * s.success_rate:.0f}% "
                     f"msd {s.mean_sq_dist:.2e} (ref {ref:.2e}, x{ref / s.mean_sq_dist:.1f})")
    ok &= elapsed < RUNTIME_LIMIT
    record(f"criterion 1 [{mode}]", ok, f"runtime {elapsed:.0f}s; " + "; ".join(cells))
    assert ok


# -- 2 --------------------------------------------------------------------------


@pytest.mark.parametrize("mode", MODES)
def test_criterion_2_table4_trend(mode):
    rates = {}
    for alpha in TABLE4_BANDS:
        cfg = _with_mode(presets.preset_config(f"table4-alpha{alpha:g}-x0"), mode)
        rates[alpha] = runner.run_experiment(cfg, write=False).stats
    r = [rates[a].success_rate for a in sorted(rates)]
    ordered = r[0] < r[1] < r[2]
    bands = all(lo <= rates[a].success_rate <= hi for a, (lo, hi) in TABLE4_BANDS.items())
    detail = ", ".join(
        f"alpha={a:g}: {100 * rates[a].success_rate:.0f}% (band {100 * lo:.0f}-{100 * hi:.0f}%, msd {rates[a].mean_sq_dist:.3f})"
        for a, (lo, hi) in TABLE4_BANDS.items()
    )
    record(f"criterion 2 [{mode}]", ordered and bands, f"increasing={ordered}; {detail}")
    assert ordered and bands


# -- 3 --------------------------------------------------------------------------


def test_criterion_3_laplace():
    alphas = [1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4]
    rng = np.random.default_rng(20240)
    mono_samples = 0
    for _ in range(500):
        f = rng.uniform(0, 30, rng.integers(1, 300))
        vals = [laplace_value(f, a) for a in alphas]
        mono_samples += all(b <= c for b, c in zip(vals[1:], vals[:-1]))

    grid = Grid(-3.0, 3.0, 600)
    fr = make_benchmark("rastrigin", 1, B=0.3)
    mono_dens = 0
    for _ in range(50):
        c, w = rng.uniform(-2.5, 2.5, 3), rng.uniform(0.1, 1.0, 3)
        rho = DensityField1D.project(lambda x: sum(np.exp(-((x - ci) ** 2) / (2 * wi**2)) for ci, wi in zip(c, w)), grid, 2)
        vals = [laplace_value_density(rho, fr, a) for a in alphas]
        mono_dens += all(b <= c for b, c in zip(vals[1:], vals[:-1]))

    gaps = []
    for _ in range(200):
        f = 1.0 + np.cumsum(rng.uniform(0.05, 1.0, rng.integers(2, 100)))
        gaps.append(laplace_value(rng.permutation(f), 1e4) - f.min())
    # density: a grid fine enough to resolve exp(-1e4 f) near the minimiser
    fine = DensityField1D.uniform(Grid(-0.1, 0.1, 2000), -0.1, 0.1, 2)
    dens_gap = laplace_value_density(fine, make_benchmark("rastrigin", 1), 1e4)

    ok = mono_samples == 500 and mono_dens == 50 and max(gaps) < 1e-3 and dens_gap < 1e-3
    record("criterion 3", ok,
           f"monotone {mono_samples}/500 samples, {mono_dens}/50 densities; "
           f"max gap at alpha=1e4 {max(gaps):.2e} (samples), {dens_gap:.2e} (density)")
    assert ok


# -- 4 --------------------------------------------------------------------------


def test_criterion_4_variance_law():
    p = CboParams(sigma=0.0, dt=0.01, heaviside_mode="always_one")
    f = constant(1.0, 1)
    ens = ParticleEnsemble.initial(InitDistribution("uniform_box", -3.0, 3.0), 200, 1, 11)
    V0 = np.var(ens.positions)
    worst = 0.0
    for k in range(1, 501):
        ens = em_step(ens, p, f)
        worst = max(worst, abs(np.var(ens.positions) / (V0 * (1 - p.dt) ** (2 * k)) - 1.0))
    particles_ok = worst < 1e-12

    h = 1e-2
    pm = CboParams(sigma=0.0, heaviside_mode="always_one")
    rho = DensityField1D.uniform(Grid.with_spacing(-3.0, 3.0, h), -3.0, 3.0, 1)
    cache = _ObjectiveCache(rho.grid, rho.basis, f)
    t, ts, vs = 0.0, [0.0], [rho.variance()]
    while t < 2.0:
        tau = 0.9 * h / 3.0
        rho, _ = strang_step(rho, f, pm, tau, cache=cache)
        t += tau
        ts.append(t)
        vs.append(rho.variance())
    rate = -np.polyfit(ts, np.log(vs), 1)[0]
    mf_ok = abs(rate - 2.0) <= 0.2
    record("criterion 4", particles_ok and mf_ok,
           f"particles: max rel. deviation from (1-dt)^(2k) law {worst:.1e} over 500 steps; "
           f"mean-field rate {rate:.6f} vs 2 (h=1e-2, t<=2)")
    assert particles_ok and mf_ok


# -- 5 --------------------------------------------------------------------------


def test_criterion_5_level_set():
    c = 9.896
    roots = np.sort(np.real(np.roots([0.2, 0.0, -2.0, 0.5, 10.0 - c])))
    f = make_benchmark("double_well")
    assert np.allclose(f.evaluate(roots[:, None]), c, atol=1e-12)
    X = np.repeat(roots, 5)[:, None]
    p = CboParams(sigma=0.0, alpha=40.0, dt=0.1)
    ens = ParticleEnsemble(positions=X.copy(), rng=np.random.default_rng(0))
    worst = 0.0
    for _ in range(100):
        new = em_step(ens, p, f)
        worst = max(worst, float(np.abs(new.positions - ens.positions).max()))
        ens = new
    ok = worst < 1e-12
    record("criterion 5", ok, f"level f={c}: 4 crossings x5 particles, max displacement per step {worst:.1e} over 100 steps")
    assert ok


# -- 6 --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def w1_study():
    cfg = presets.preset_config("fig4-w1-convergence")
    out = {}
    for (assign, _), a in zip(cfg.sweep_points(), runner.run_sweep(cfg, write=False)):
        out[assign["N"]] = a.stats
    return cfg, out


def _r2(x, y):
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return coef[0], 1.0 - np.sum(resid**2) / np.sum((y - y.mean()) ** 2)


def test_criterion_6_w1(w1_study):
    cfg, stats = w1_study
    parts, ok = [], True
    peaks = {}
    for N, s in sorted(stats.items()):
        t = s.times
        mean, var = s.series["w1"]
        w0 = mean[0]
        w0_ok = abs(w0 - 1.25) <= 2.0 / N
        window = t <= 20.0 + 1e-9
        slope, r2 = _r2(t[window], np.log(mean[window]))
        early = t <= 5.0 + 1e-9
        slope5, r2_5 = _r2(t[early], np.log(mean[early]))
        peaks[N] = var.max()
        ok &= w0_ok and r2 >= 0.95
        parts.append(f"N={N}: W1(0)={w0:.4f} (|.-1.25|<=2/N: {w0_ok}), log-linear R^2 on [0,20] {r2:.3f} "
                     f"(slope {slope:.3f}); on [0,5] R^2 {r2_5:.4f} slope {slope5:.3f}; "
                     f"E[W1](20)={mean[window][-1]:.2e}; Var peak {peaks[N]:.2e}")
    var_ok = peaks[1000] < peaks[100]
    ok &= var_ok
    record("criterion 6", ok, f"M={cfg.M}; " + "; ".join(parts) + f"; Var peak decreases: {var_ok}")
    assert ok


def test_w1_curves_agree_across_N(w1_study):
    # diagnostics invariant: E[W1] for N=100 and N=1000 within 2 Monte-Carlo standard errors pointwise
    cfg, stats = w1_study
    m1, v1 = stats[100].series["w1"]
    m2, v2 = stats[1000].series["w1"]
    se = np.sqrt(v1 / cfg.M + v2 / cfg.M)
    dev = np.abs(m1 - m2)
    inside = dev <= 2 * se
    inside[se == 0] = dev[se == 0] == 0.0
    ok = bool(np.all(inside))
    worst = int(np.argmax(dev / np.where(se > 0, se, np.inf)))
    record("invariant W1 agreement", ok,
           f"{inside.sum()}/{inside.size} time points within 2 SE; worst at t={stats[100].times[worst]:.1f}: "
           f"|diff|={dev[worst]:.2e}, SE={se[worst]:.2e}")
    assert ok


# -- 7, 8, 9 -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def meanfield_runs():
    out = {}
    for name in STOP_TIMES:
        cfg = presets.preset_config(name)
        t0 = time.perf_counter()
        out[name] = (cfg, runner.run_meanfield(cfg, write=False).meanfield, time.perf_counter() - t0)
    return out


def test_criterion_7_stopping_times(meanfield_runs):
    parts, ok = [], True
    for name, (cfg, mf, wall) in meanfield_runs.items():
        ref = STOP_TIMES[name]
        x_star = cfg.benchmark.shift_B
        lo, hi = mf.support
        t_ok = abs(mf.stop_time - ref) <= STOP_TOL * ref
        s_ok = lo <= x_star <= hi
        ok &= t_ok and s_ok
        parts.append(f"{name}: stop t={mf.stop_time:.2f} (ref {ref}, {'in' if t_ok else 'outside'} +-30%), "
                     f"support [{lo:.2f}, {hi:.2f}] contains {x_star:g}: {s_ok} ({wall:.0f}s)")
    record("criterion 7", ok, "; ".join(parts))
    assert ok


def test_criterion_8_particles_in_support(meanfield_runs):
    _, mf, _ = meanfield_runs["fig3-ackley"]
    cfg = replace(presets.preset_config("fig3-ackley"), mode=Mode.PARTICLES, M=200)
    arch = runner.run_experiment(cfg, write=False)
    lo, hi = mf.support
    vf = np.array([r.final_vf[0] for r in arch.records])
    frac = float(np.mean((vf >= lo) & (vf <= hi)))
    ok = frac >= 0.95
    record("criterion 8", ok, f"{100 * frac:.1f}% of M=200 particle v_f in mean-field support [{lo:.3f}, {hi:.3f}] "
           f"(v_f range [{vf.min():.3f}, {vf.max():.3f}])")
    assert ok


def _translation_order(p):
    hs, errs = [], []
    for n in (40, 80, 160):
        g = Grid(-2.0, 2.0, n)
        gauss = lambda m: (lambda x: np.exp(-((x - m) ** 2) / (2 * 0.25**2)))
        rho = DensityField1D.project(gauss(-0.5), g, p)
        mu = FieldCoefficients.from_functions(g, rho.basis, mu=lambda x: 1.0)
        tau = 0.5 * g.h
        for _ in range(round(1.0 / tau)):
            rho = convection_halfstep(rho, mu, tau)
        x, w, vals = rho.quadrature()
        errs.append(math.sqrt(np.sum(w * (vals - gauss(0.0)(x)) ** 2)))
        hs.append(g.h)
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def _heat_order(p):
    D, s0, T = 0.5, 0.3, 0.1
    hs, errs = [], []
    exact = lambda x: np.exp(-x**2 / (2 * (s0**2 + 2 * D * T))) / math.sqrt(2 * math.pi * (s0**2 + 2 * D * T))
    for n in (20, 40, 80):
        g = Grid(-5.0, 5.0, n)
        rho = DensityField1D.project(lambda x: np.exp(-x**2 / (2 * s0**2)) / (s0 * math.sqrt(2 * math.pi)), g, p)
        kappa = FieldCoefficients.from_functions(g, rho.basis, kappa=lambda x: D)
        for _ in range(400):
            rho = diffusion_step(rho, kappa, T / 400, DiffusionOptions(theta=0.5))
        x, w, vals = rho.quadrature()
        errs.append(math.sqrt(np.sum(w * (vals - exact(x)) ** 2)))
        hs.append(g.h)
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def _strang_order():
    p = CboParams(sigma=0.5, heaviside_mode="always_one")
    f = constant(0.0)
    rho0 = DensityField1D.project(lambda x: np.exp(-x**2 / 0.5), Grid.with_spacing(-3.0, 3.0, 0.1), 2)
    opts = MeanFieldOptions(diffusion=DiffusionOptions(theta=0.5))

    def run(n):
        rho = rho0
        for _ in range(n):
            rho, _ = strang_step(rho, f, p, 0.2 / n, opts)
        return rho.coeffs

    ref = run(1024)
    errs = [l2_norm(run(n) - ref, rho0.basis, rho0.h) for n in (16, 32, 64)]
    return np.polyfit(np.log([1 / 16, 1 / 32, 1 / 64]), np.log(errs), 1)[0]


def test_criterion_9_solver(meanfield_runs):
    drift = max(mf.mass_drift for _, mf, _ in meanfield_runs.values())
    conv = {p: _translation_order(p) for p in (1, 2)}
    heat = {p: _heat_order(p) for p in (1, 2)}
    strang = _strang_order()
    ok = (
        drift <= 1e-6
        and all(conv[p] >= p + 0.5 for p in conv)
        and all(heat[p] >= p + 0.5 for p in heat)
        and abs(strang - 2.0) <= 0.2
    )
    record("criterion 9", ok,
           f"max cumulative mass drift {drift:.1e} over the 1-D presets; convection order "
           f"p=1 {conv[1]:.2f}, p=2 {conv[2]:.2f}; diffusion order p=1 {heat[1]:.2f}, p=2 {heat[2]:.2f}; "
           f"Strang order {strang:.2f}")
    assert ok


# -- 10 ------------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    names = ["fig1-double-well", "fig3-ackley", "table1-N50-x0", "fig4-w1-convergence"]
    same, checked = True, 0
    for name in names:
        cfg = presets.preset_config(name)
        runner.run_sweep(cfg, tmp_path / "a", workers=1)
        runner.run_sweep(cfg, tmp_path / "b", workers=2)
        for fa in sorted((tmp_path / "a" / name).rglob("stats.json")):
            fb = tmp_path / "b" / fa.relative_to(tmp_path / "a")
            same &= fa.read_bytes() == fb.read_bytes()
            checked += 1
    record("criterion 10", same, f"{checked} stats.json files byte-identical across repeated runs "
           f"(serial vs 2 workers) of {', '.join(names)}")
    assert same and checked >= len(names)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
