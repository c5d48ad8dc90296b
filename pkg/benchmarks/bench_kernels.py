"""Time the hot kernels with numba and with the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]

Each engine runs in its own interpreter because CLFLAB_DISABLE_NUMBA is read
at import time. Compile time is excluded: every case is run once untimed.
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
import clflab as c
from clflab import _jit, poincare

scale, repeat = float(sys.argv[1]), int(sys.argv[2])
hh = c.HenonHeilesSpec(1.0, 0.125)
hsys = hh.system()
x0 = hh.default_state()
lin = c.make_linear([[0.3, 1.0, 0.0], [0.2, 0.1, 0.4], [0.0, 0.5, -0.4]])
portrait = c.HenonHeilesSpec(2.0, 0.037)

cases = {
    "evolve_tangent_rk4": lambda T: c.evolve(hsys, x0, np.eye(4), c.IntegratorConfig("rk4", 1e-3), T,
                                             sample_every=T),
    "benettin_leapfrog": lambda T: c.benettin_spectrum(hsys, x0, c.default_config(hsys), T, 1.0),
    "benettin_linear_rk4": lambda T: c.benettin_spectrum(lin, [1.0, 0.0, 0.0], c.IntegratorConfig(), 10 * T, 0.1),
    "ginelli_leapfrog": lambda T: c.ginelli_clv(hsys, x0, c.default_config(hsys), T / 4, T / 2, T / 4, 1.0,
                                                sample_every=0.1),
    "section_orbit": lambda T: poincare.orbit_section(portrait.system(), poincare.SectionSpec(),
                                                      portrait.default_state(), c.default_config(hsys), T,
                                                      t_align=1.0),
}
out = {"numba": _jit.NUMBA_ENABLED, "timings": {}}
for name, fn in cases.items():
    fn(4.0)  # compile / warm up
    T = 4.0 * max(1, round(10 * scale))
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(T)
        runs.append(time.perf_counter() - t0)
    out["timings"][name] = {"t_span": T, "seconds": min(runs)}
json.dump(out, sys.stdout)
"""


def run_engine(disable, scale, repeat):
    env = dict(os.environ)
    env.pop("CLFLAB_DISABLE_NUMBA", None)
    if disable:
        env["CLFLAB_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(scale), str(repeat)], env=env,
                          capture_output=True, text=True)
    if proc.returncode:
        sys.exit(proc.stderr)
    return json.loads(proc.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies the simulated time span of every case")
    ap.add_argument("--json", metavar="PATH", help="also write the raw timings here")
    args = ap.parse_args()

    jit = run_engine(False, args.scale, args.repeat)
    py = run_engine(True, args.scale, args.repeat)
    if not jit["numba"]:
        print("numba is not importable; both columns use the fallback")
    print(f"{'case':24s} {'t_span':>8s} {'numba [s]':>11s} {'numpy [s]':>11s} {'speedup':>9s}")
    for name, a in jit["timings"].items():
        b = py["timings"][name]
        print(f"{name:24s} {a['t_span']:8.1f} {a['seconds']:11.4f} {b['seconds']:11.4f} "
              f"{b['seconds'] / a['seconds']:8.0f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": jit, "fallback": py}, fh, indent=2)


if __name__ == "__main__":
    main()
