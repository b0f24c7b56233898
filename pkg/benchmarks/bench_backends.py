"""Compare the numba and pure-numpy kernels.

    python3 benchmarks/bench_backends.py [--repeat 5] [--json out.json]

``CBO_BACKEND`` is read at import time, so each backend is timed in its own
interpreter. Compilation is excluded by a warm-up call (numba also caches
compiled kernels on disk). The script also checks that both backends produce
the same short trajectory to rounding error.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKER = textwrap.dedent(
    """
    import json, sys, timeit
    import numpy as np
    import cbo
    from cbo.consensus import weighted_mean
    from cbo.dynamics import CboParams, InitDistribution, TrajectoryOptions, run_trajectory
    from cbo.meanfield1d import DensityField1D, Grid, MeanFieldOptions, strang_step
    from cbo.objective import make_benchmark

    repeat = int(sys.argv[1])
    rng = np.random.default_rng(0)
    out = {"backend": cbo.BACKEND, "timings": {}}

    def bench(name, fn, number):
        fn()
        t = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
        out["timings"][name] = t

    X = rng.uniform(-3, 3, (1000, 20))
    f20 = make_benchmark("rastrigin", 20)
    fX = f20.evaluate(X)
    bench("rastrigin_eval N=1000 d=20", lambda: f20.evaluate(X), 200)
    bench("consensus N=1000 d=20", lambda: weighted_mean(X, fX, 30.0), 200)

    fa = make_benchmark("ackley", 20)
    p = CboParams(sigma=5.0, alpha=30.0, dt=0.01)
    init = InitDistribution("uniform_box", -3.0, 3.0)
    opts = TrajectoryOptions(stride=10, keep_positions=False)
    bench("trajectory ackley d=20 N=100 T=10", lambda: run_trajectory(init, p, fa, 10.0, 0, 100, opts), 1)
    rec = run_trajectory(init, p, fa, 0.1, 0, 100, opts)
    out["final_vf"] = rec.final_vf.tolist()

    f1 = make_benchmark("ackley", 1)
    rho = DensityField1D.uniform(Grid(-3.0, 3.0, 600), -3.0, 3.0, 1)
    p1 = CboParams(alpha=40.0, sigma=0.7)
    mo = MeanFieldOptions()
    bench("strang_step h=0.01 p=1", lambda: strang_step(rho, f1, p1, 0.003, mo), 20)
    print(json.dumps(out))
    """
)


def run_backend(backend: str, repeat: int) -> dict:
    env = dict(os.environ, CBO_BACKEND=backend)
    res = subprocess.run(
        [sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write the raw results here")
    args = ap.parse_args(argv)

    nb = run_backend("numba", args.repeat)
    npy = run_backend("numpy", args.repeat)
    print(f"{'kernel':40s} {'numba [s]':>12s} {'numpy [s]':>12s} {'speed-up':>9s}")
    for name, t_nb in nb["timings"].items():
        t_np = npy["timings"][name]
        print(f"{name:40s} {t_nb:12.3e} {t_np:12.3e} {t_np / t_nb:9.2f}")
    diff = max(abs(a - b) for a, b in zip(nb["final_vf"], npy["final_vf"]))
    # over long horizons the rounding differences are amplified by the noisy dynamics
    print(f"max |v_f(numba) - v_f(numpy)| after 10 steps: {diff:.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": nb, "numpy": npy, "vf_max_abs_diff": diff}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
