"""Run experiments and persist them as result archives.

Archive layout (one directory per experiment)::

    <outputs>/<name>/
        config.yaml        the config exactly as run
        runs.csv           one row per sample
        stats.json         aggregate statistics (no timings, byte-stable)
        timing.json        wallclock figures (not reproducible by nature)
        series/*.csv       t, mean, variance over samples
        meanfield.json     stop time, support, v_f series   (mean-field modes)
        snapshots/*.csv    t, x, cell average               (mean-field modes)

The directory is assembled under a hidden temporary name next to its final
location and renamed into place, so an interrupted run never leaves a partial
archive under the final path.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from .._accel import BACKEND
from ..diagnostics import RunRecord, SampleStatistics, aggregate
from ..dynamics import TrajectoryOptions, run_trajectory
from ..errors import ConfigError, DivergedRunError, NonConvergenceError
from ..meanfield1d import (
    DensityField1D,
    DiffusionOptions,
    Grid,
    MeanFieldOptions,
    MeanFieldResult,
    solve_to_stationarity,
)
from .config import ExperimentConfig, Mode, config_from_dict, config_to_dict, dump_config, point_label

log = logging.getLogger(__name__)

RNG_SCHEME = "philox; sample k uses seed seed_base+k; initial positions, then one (N,d) normal block per step"
WORKERS_ENV = "CBO_WORKERS"
DIVERGENCE_WARN_FRACTION = 0.10


@dataclass
class ResultArchive:
    config: ExperimentConfig
    records: list = field(default_factory=list)
    stats: SampleStatistics | None = None
    meanfield: MeanFieldResult | None = None
    meanfield_converged: bool | None = None
    status: str = "ok"  # ok | warning | nonconverged
    path: Path | None = None
    wallclock: float = 0.0
    tool_version: str = __version__
    rng_scheme: str = RNG_SCHEME

    def stats_dict(self) -> dict:
        cfg = self.config
        out = {
            "name": cfg.name,
            "mode": cfg.mode.value,
            "status": self.status,
            "tool_version": self.tool_version,
            "rng_scheme": self.rng_scheme,
            "backend": BACKEND,
            "seed_base": cfg.seed_base,
        }
        if self.stats is not None:
            out.update({"N": cfg.N, "M": cfg.M, "T": cfg.T})
            out.update(_finite_or_none(self.stats.to_dict()))
        if self.meanfield is not None:
            out["meanfield"] = _meanfield_summary(self.meanfield, self.meanfield_converged)
        return out


# -- single samples -------------------------------------------------------------


def _config_key(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def _trajectory_options(cfg: ExperimentConfig) -> TrajectoryOptions:
    return TrajectoryOptions(stride=cfg.stride, keep_positions=False)


def run_sample(cfg: ExperimentConfig, k: int, key: str | None = None) -> RunRecord:
    """Run sample ``k`` (seed ``seed_base + k``); divergence yields a flagged record."""
    f = cfg.benchmark.build()
    seed = cfg.seed_base + k
    key = key or _config_key(cfg)
    try:
        rec = run_trajectory(cfg.init, cfg.cbo, f, cfg.T, seed, cfg.N, _trajectory_options(cfg))
    except DivergedRunError as exc:
        d = f.dim
        rec = RunRecord(
            final_vf=np.full(d, np.nan),
            seed=seed,
            times=np.empty(0),
            vf_series=np.empty((0, d)),
            variance_series=np.empty(0),
            success=False if f.known_minimizer is not None else None,
            diverged=True,
            error=str(exc),
            n_steps=exc.step,
        )
    rec.config_key = key
    return rec


def _run_block(cfg_data: dict, ks: list) -> list:
    cfg = config_from_dict(cfg_data)
    key = _config_key(cfg)
    return [run_sample(cfg, k, key) for k in ks]


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        n = requested
    else:
        raw = os.environ.get(WORKERS_ENV)
        if raw:
            try:
                n = int(raw)
            except ValueError:
                raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
        else:
            n = os.cpu_count() or 1
    return max(1, n)


def run_samples(cfg: ExperimentConfig, workers: int | None = None) -> list:
    """All ``M`` samples of ``cfg``, in sample order regardless of scheduling."""
    n = min(worker_count(workers), cfg.M)
    if n == 1:
        key = _config_key(cfg)
        return [run_sample(cfg, k, key) for k in range(cfg.M)]
    blocks = [list(range(i, cfg.M, n)) for i in range(n)]
    data = config_to_dict(cfg)
    out: list = [None] * cfg.M
    with ProcessPoolExecutor(max_workers=n) as pool:
        for ks, recs in zip(blocks, pool.map(_run_block, [data] * n, blocks)):
            for k, r in zip(ks, recs):
                out[k] = r
    return out


# -- experiments --------------------------------------------------------------------


def run_experiment(
    cfg: ExperimentConfig,
    outputs: str | os.PathLike | None = None,
    workers: int | None = None,
    write: bool = True,
) -> ResultArchive:
    """Run every sample of a single (non-sweep) config and archive the result.

    Mean-field modes additionally solve the 1-D density equation; a
    non-converged solve still writes its partial archive and then re-raises
    :class:`NonConvergenceError` with ``.archive`` set.
    """
    if cfg.sweep:
        raise ConfigError("config has sweep lists; use run_sweep")
    t0 = time.perf_counter()
    archive = ResultArchive(config=cfg)
    pending_error = None
    if cfg.mode in (Mode.PARTICLES, Mode.BOTH):
        archive.records = run_samples(cfg, workers)
        archive.stats = aggregate(archive.records)
        frac = archive.stats.n_diverged / cfg.M
        if frac > DIVERGENCE_WARN_FRACTION:
            archive.status = "warning"
            log.warning("%s: %d of %d samples diverged", cfg.name, archive.stats.n_diverged, cfg.M)
    if cfg.mode in (Mode.MEANFIELD1D, Mode.BOTH):
        try:
            archive.meanfield = solve_meanfield(cfg)
            archive.meanfield_converged = True
        except NonConvergenceError as exc:
            archive.meanfield = exc.partial
            archive.meanfield_converged = False
            archive.status = "nonconverged"
            pending_error = exc
    archive.wallclock = time.perf_counter() - t0
    if write:
        write_archive(archive, outputs)
    if pending_error is not None:
        pending_error.archive = archive
        raise pending_error
    return archive


def run_meanfield(cfg: ExperimentConfig, outputs=None, write: bool = True) -> ResultArchive:
    """Mean-field part of ``cfg`` only (the particle samples are skipped)."""
    return run_experiment(replace(cfg, mode=Mode.MEANFIELD1D, sweep=None), outputs, write=write)


def meanfield_options(cfg: ExperimentConfig) -> MeanFieldOptions:
    m = cfg.meanfield
    return MeanFieldOptions(
        tau_max=m.tau_max,
        limiter=m.limiter,
        diffusion=DiffusionOptions(penalty=m.penalty, penalty_scaled=m.penalty_scaled, theta=m.theta),
        positivity_abort=m.positivity_abort,
        max_iter=m.max_iter,
        t_expected=m.t_expected,
        snapshot_times=m.snapshot_times,
    )


def initial_density(cfg: ExperimentConfig) -> DensityField1D:
    m = cfg.meanfield
    a, b = m.domain
    grid = Grid.with_spacing(a, b, m.h)
    lo, hi = (float(np.ravel(x)[0]) for x in (cfg.init.lower, cfg.init.upper))
    if lo < a or hi > b:
        raise ConfigError(f"initial support [{lo}, {hi}] leaves the domain [{a}, {b}]")
    for edge in (lo, hi):
        if abs((edge - a) / m.h - round((edge - a) / m.h)) > 1e-9:
            raise ConfigError(f"initial support edge {edge} is not a grid node")
    return DensityField1D.uniform(grid, lo, hi, m.degree)


def solve_meanfield(cfg: ExperimentConfig) -> MeanFieldResult:
    if cfg.benchmark.dim != 1:
        raise ConfigError(f"the mean-field solver is one-dimensional; benchmark has dim={cfg.benchmark.dim}")
    f = cfg.benchmark.build()
    rho0 = initial_density(cfg)
    return solve_to_stationarity(rho0, f, cfg.cbo, cfg.meanfield.tol, meanfield_options(cfg))


# -- sweeps -----------------------------------------------------------------------


def check_budget(cfg: ExperimentConfig) -> int:
    n = cfg.n_trajectories()
    if n > cfg.sweep_budget:
        raise ConfigError(
            f"sweep would launch {n} trajectories, above the budget of {cfg.sweep_budget}"
        )
    return n


def run_sweep(cfg: ExperimentConfig, outputs=None, workers: int | None = None, write: bool = True) -> list:
    """One archive per grid point plus ``summary.csv``/``summary.txt`` under ``<outputs>/<name>``."""
    check_budget(cfg)
    if not cfg.sweep:
        return [run_experiment(cfg, outputs, workers, write)]
    archives = []
    for _, point in cfg.sweep_points():
        archives.append(run_experiment(point, outputs, workers, write))
    if write:
        root = Path(outputs or cfg.outputs) / cfg.name
        _atomic_write_text(root / "summary.csv", summary_csv(cfg, archives))
        _atomic_write_text(root / "summary.txt", summary_table(cfg, archives))
    return archives


def _cell(a: ResultArchive) -> str:
    s = a.stats
    if s is None:
        return "-"
    return f"{100 * s.success_rate:.1f}% / {s.mean_sq_dist:.3g}"


def summary_table(cfg: ExperimentConfig, archives: list) -> str:
    """Rows are minimizer positions x*, columns the remaining swept values.

    Each cell reads ``success rate / mean (1/d)|v_f - x*|^2``.
    """
    pts = [a for a, _ in cfg.sweep_points()]
    col_keys = [k for k in ("N", "alpha") if k in (cfg.sweep or {})]
    rows = cfg.sweep.get("shift_B", [cfg.benchmark.shift_B]) if cfg.sweep else [cfg.benchmark.shift_B]
    cols = []
    for a in pts:
        c = tuple((k, a[k]) for k in col_keys)
        if c not in cols:
            cols.append(c)
    table = {}
    for a, arch in zip(pts, archives):
        table[(a.get("shift_B", cfg.benchmark.shift_B), tuple((k, a[k]) for k in col_keys))] = _cell(arch)
    head = ["x*"] + [", ".join(f"{k}={_fmt(v)}" for k, v in c) or "value" for c in cols]
    lines = [head] + [[_fmt(r)] + [table.get((r, c), "-") for c in cols] for r in rows]
    width = [max(len(line[i]) for line in lines) for i in range(len(head))]
    out = [" | ".join(s.ljust(w) for s, w in zip(line, width)).rstrip() for line in lines]
    out.insert(1, "-+-".join("-" * w for w in width))
    return f"{cfg.name}: success rate / mean (1/d)|v_f - x*|^2\n" + "\n".join(out) + "\n"


def summary_csv(cfg: ExperimentConfig, archives: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point", "N", "alpha", "shift_B", "success_rate", "mean_sq_dist", "n_diverged", "M"])
    for (assign, point), arch in zip(cfg.sweep_points(), archives):
        s = arch.stats
        w.writerow(
            [
                point_label(assign),
                point.N,
                repr(point.cbo.alpha),
                repr(point.benchmark.shift_B),
                repr(s.success_rate) if s else "",
                repr(s.mean_sq_dist) if s else "",
                s.n_diverged if s else "",
                point.M,
            ]
        )
    return buf.getvalue()


def _fmt(v) -> str:
    v = float(v)
    return f"{int(v)}" if v.is_integer() else f"{v:g}"


# -- writing ------------------------------------------------------------------------


def archive_path(cfg: ExperimentConfig, outputs=None) -> Path:
    return Path(outputs or cfg.outputs) / cfg.name


def write_archive(archive: ResultArchive, outputs=None) -> Path:
    final = archive_path(archive.config, outputs)
    _atomic_dir(final, lambda tmp: _fill_archive(tmp, archive))
    archive.path = final
    return final


def _fill_archive(root: Path, archive: ResultArchive) -> None:
    cfg = archive.config
    (root / "config.yaml").write_text(dump_config(cfg))
    (root / "stats.json").write_text(_dumps(archive.stats_dict()))
    (root / "timing.json").write_text(
        _dumps({"wallclock_total": archive.wallclock, "wallclock_runs": [r.wallclock for r in archive.records]})
    )
    if archive.records:
        (root / "runs.csv").write_text(runs_csv(archive.records))
    series_dir = root / "series"
    if archive.stats is not None and archive.stats.series:
        series_dir.mkdir()
        t = archive.stats.times
        for name, (mean, var) in archive.stats.series.items():
            _write_rows(series_dir / f"{name}.csv", ["t", "mean", "variance"], zip(t, mean, var))
    if archive.meanfield is not None:
        mf = archive.meanfield
        payload = _meanfield_summary(mf, archive.meanfield_converged)
        payload["times"] = mf.times.tolist()
        payload["vf_series"] = mf.vf_series.tolist()
        payload["increments"] = mf.increments.tolist()
        (root / "meanfield.json").write_text(_dumps(payload))
        snap = root / "snapshots"
        snap.mkdir()
        x = mf.rho.grid.centers
        for i, (ts, avgs) in enumerate(mf.snapshots):
            _write_rows(snap / f"snapshot_{i:03d}.csv", ["t", "x", "cell_average"], ((ts, xi, a) for xi, a in zip(x, avgs)))


def runs_csv(records) -> str:
    d = max((np.size(r.final_vf) for r in records), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "seed", "success", "sq_dist_per_dim", "diverged", "n_steps", "n_evals", "error"]
               + [f"vf_{i}" for i in range(d)])
    for k, r in enumerate(records):
        w.writerow(
            [k, r.seed, "" if r.success is None else int(r.success),
             "" if r.sq_dist_per_dim is None else repr(float(r.sq_dist_per_dim)),
             int(r.diverged), r.n_steps, r.n_evals, r.error or ""]
            + [repr(float(v)) for v in np.ravel(r.final_vf)]
        )
    return buf.getvalue()


def _meanfield_summary(mf: MeanFieldResult, converged) -> dict:
    return _finite_or_none(
        {
            "converged": bool(converged),
            "stop_time": mf.stop_time,
            "support": list(mf.support) if mf.support is not None else None,
            "n_steps": mf.n_steps,
            "final_vf": float(mf.vf_series[-1]) if len(mf.vf_series) else None,
            "mass_drift": mf.mass_drift,
            "min_relative_average": mf.min_relative_average,
        }
    )


def _finite_or_none(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _atomic_dir(final: Path, fill) -> None:
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", suffix=".tmp", dir=final.parent))
    try:
        fill(tmp)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        old = final.with_name(f".{final.name}.old-{os.getpid()}")
        os.replace(final, old)
        os.replace(tmp, final)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, final)


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
