"""Time the orbit kernels under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--M 20000] [--N 1024] [--repeat 3]

Backends are switched through STEINDYN_BACKEND, which the kernels read per call.
Outputs of the two backends are compared bit for bit.
"""
import argparse
import os
import time

import numpy as np

from steindyn import observables, systems
from steindyn._accel import BACKEND_ENV, HAVE_NUMBA
from steindyn.rng import Stream

CASES = {
    "doubling/cos": (systems.doubling(),
                     observables.trig_observable([{"freq": [1], "amp": 1.0}])),
    "toral/cos2": (systems.toral([[2, 1], [1, 1]]),
                   observables.trig_observable([{"component": 0, "freq": [1, 0], "amp": 1.0},
                                                {"component": 1, "freq": [0, 1], "amp": 1.0}],
                                               dim=2, phase_dim=2)),
}


def run(spec, f, M, N):
    return systems.birkhoff_pool(spec, f, [N // 4, N], M, Stream(1), workers=1)


def best_time(fn, repeat):
    out, best = None, np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--M", type=int, default=20_000)
    ap.add_argument("--N", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba not importable")
    print(f"{'case':<14} {'numba s':>9} {'numpy s':>9} {'speedup':>8}  identical")
    for name, (spec, f) in CASES.items():
        os.environ[BACKEND_ENV] = "numba"
        run(spec, f, 64, 8)  # compile
        t_nb, out_nb = best_time(lambda: run(spec, f, a.M, a.N), a.repeat)
        os.environ[BACKEND_ENV] = "numpy"
        t_np, out_np = best_time(lambda: run(spec, f, a.M, a.N), a.repeat)
        same = all(np.array_equal(out_nb[k], out_np[k]) for k in out_nb)
        print(f"{name:<14} {t_nb:9.3f} {t_np:9.3f} {t_np / t_nb:8.1f}  {same}")
    os.environ.pop(BACKEND_ENV, None)


if __name__ == "__main__":
    main()
