"""Time the hot kernels with numba and with the numpy/Python fallback.

The backend is fixed at import time by CSL_COSMO_NO_NUMBA, so each backend
runs in its own interpreter. Usage:

    python benchmarks/bench_kernels.py [--repeat 2] [--traj 128] [--json out.json]
"""

import argparse
import json
import math
import os
import subprocess
import sys
import time

CASES = ("moments", "ensemble", "exclusion")


def _best(fn, repeat):
    fn()  # warm-up (jit compilation, caches)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run_worker(repeat, n_traj):
    import numpy as np

    from csl_cosmo._accel import backend_name
    from csl_cosmo.exclusion import sample_overlay, scan_grid
    from csl_cosmo.moments import ModeSetup, integrate_moments
    from csl_cosmo.wavefunction import run_ensemble

    deep = ModeSetup(eps1=0.005, g=1e-6, h=1.0, x_end=math.exp(-15.0))
    mode = ModeSetup(eps1=0.005, g=10.0, h=1.0, x_end=0.05)
    x_out = np.geomspace(3.0, mode.x_end, 10)
    overlay = sample_overlay()
    fns = {
        "moments": lambda: integrate_moments(deep, n_inf=2, radiation=False),
        "ensemble": lambda: run_ensemble(mode, n_traj, 1, x_out),
        "exclusion": lambda: scan_grid(resolution=(200, 200), overlay=overlay),
    }
    out = {"backend": backend_name(), "times": {k: _best(f, repeat) for k, f in fns.items()}}
    print(json.dumps(out))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2)
    ap.add_argument("--traj", type=int, default=128)
    ap.add_argument("--json", help="write the results here")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        run_worker(args.repeat, args.traj)
        return 0
    results = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, CSL_COSMO_NO_NUMBA=flag)
        cmd = [sys.executable, __file__, "--worker", "--repeat", str(args.repeat), "--traj", str(args.traj)]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        if res["backend"] != label:
            print(f"note: requested {label}, got {res['backend']}", file=sys.stderr)
        results[label] = res["times"]
    print(f"{'kernel':<10} {'numba [s]':>11} {'numpy [s]':>11} {'speed-up':>9}")
    for case in CASES:
        a, b = results["numba"][case], results["numpy"][case]
        print(f"{case:<10} {a:11.4f} {b:11.4f} {b / a:9.1f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
