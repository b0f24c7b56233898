"""Command-line front end.

    cbo presets
    cbo describe <name>
    cbo run <config.yaml | preset> [--set key=value ...] [--full-M] [-o DIR]
    cbo sweep <config.yaml | preset> [...]
    cbo meanfield <config.yaml | preset> [...]

Exit codes: 0 success, 1 configuration error, 2 more than 10% of the samples
of some experiment diverged, 3 the mean-field solver did not reach its
stopping rule.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import CBOError, ConfigError, NonConvergenceError
from .harness import presets
from .harness.config import ExperimentConfig, apply_overrides, load_config
from .harness.runner import run_meanfield, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_WARNING, EXIT_NONCONVERGED = 0, 1, 2, 3


def _resolve(target: str, overrides, full_M: bool, M: int | None) -> list[ExperimentConfig]:
    p = Path(target)
    if p.suffix in (".yaml", ".yml") or p.is_file():
        cfgs = [load_config(p)]
    else:
        cfgs = [presets.preset_config(n, full_M=full_M) for n in presets.expand(target)]
    out = []
    for c in cfgs:
        c = apply_overrides(c, overrides)
        if M is not None:
            c = replace(c, M=M)
        out.append(c)
    return out


def _report(archives) -> int:
    code = EXIT_OK
    for a in archives:
        line = f"{a.config.name}: "
        if a.stats is not None:
            s = a.stats
            line += f"success {100 * s.success_rate:.1f}%  mean (1/d)|v_f-x*|^2 {s.mean_sq_dist:.3e}"
            if s.n_diverged:
                line += f"  diverged {s.n_diverged}/{s.n_samples}"
        if a.meanfield is not None:
            mf = a.meanfield
            line += f"  mean-field stop t={mf.stop_time:.2f} support={mf.support}"
        if a.path is not None:
            line += f"  -> {a.path}"
        print(line)
        if a.status == "warning":
            code = max(code, EXIT_WARNING)
    return code


def _cmd_presets(args) -> int:
    for name in presets.list_presets():
        if presets.is_group(name):
            print(f"{name}  (group: {', '.join(presets.expand(name))})")
        else:
            print(f"{name}  {presets.get_preset(name).summary}")
    return EXIT_OK


def _cmd_describe(args) -> int:
    print(presets.describe_preset(args.name), end="")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfgs = _resolve(args.target, args.set, args.full_M, args.M)
    archives = []
    for cfg in cfgs:
        archives += run_sweep(cfg, outputs=args.outputs, workers=args.workers)
    if args.print_summary:
        from .harness.runner import summary_table

        for cfg in cfgs:
            if cfg.sweep:
                print(summary_table(cfg, [a for a in archives if a.config.name.startswith(cfg.name + "/")]))
    return _report(archives)


def _cmd_meanfield(args) -> int:
    archives = []
    for cfg in _resolve(args.target, args.set, False, None):
        for _, point in cfg.sweep_points():
            archives.append(run_meanfield(point, outputs=args.outputs))
    return _report(archives)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbo", description="Consensus-based optimisation experiments")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress and solver warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("presets", help="list built-in presets").set_defaults(fn=_cmd_presets)
    d = sub.add_parser("describe", help="show a preset's configuration")
    d.add_argument("name")
    d.set_defaults(fn=_cmd_describe)

    def common(p, with_samples=True):
        p.add_argument("target", help="YAML config file or preset name")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. cbo.alpha=50 (repeatable; wins over the file)")
        p.add_argument("-o", "--outputs", default=None, help="output root (default: config 'outputs')")
        if with_samples:
            p.add_argument("--full-M", action="store_true", help="use the preset's full sample count")
            p.add_argument("-M", type=int, default=None, help="override the sample count")
            p.add_argument("-j", "--workers", type=int, default=None,
                           help="worker processes (default: $CBO_WORKERS or the CPU count)")

    for verb, text in (("run", "run a config or preset"), ("sweep", "run every point of a sweep")):
        p = sub.add_parser(verb, help=text)
        common(p)
        p.add_argument("--summary", dest="print_summary", action="store_true", help="print sweep summary tables")
        p.set_defaults(fn=_cmd_run)
    m = sub.add_parser("meanfield", help="solve the 1-D mean-field equation for a config or preset")
    common(m, with_samples=False)
    m.set_defaults(fn=_cmd_meanfield)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CBOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
