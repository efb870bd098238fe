"""Compare the numba-compiled kernels with the interpreted fallback.

Each backend runs in its own interpreter because the choice is made at
import time from ``FOLMS_DISABLE_NUMBA``.  The fallback is much slower, so
it is timed on a shorter run and both are reported per sample.

    python benchmarks/bench_kernels.py --samples 20000
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
import folms
from folms import StepSizes, SystemParams, VssConfig, initial_state, run_folms_on, run_vss_on, simulate_world
from folms.sigproc import rng_stream

n = int(sys.argv[1])
params = SystemParams(sigma2_q=1e-12, sigma2_eps=1e-8, kappa=1e-8, sigma2_eta=1e-9, rho=1e-8)
world = simulate_world(params, n, rng_stream(0, 0))
state = initial_state(params, world, warm_start=True)
steps = StepSizes(1e-3, 1e-6, 1e-7)
cfg = VssConfig.for_params(params, "known")
# warm-up (compilation for numba)
small = simulate_world(params, 500, rng_stream(0, 1))
run_folms_on(small, params, steps, initial_state(params, small, True))
run_vss_on(small, params, cfg, initial_state(params, small, True))
out = {"backend": folms.backend()}
for name, fn in (("folms", lambda: run_folms_on(world, params, steps, state)),
                 ("vss", lambda: run_vss_on(world, params, cfg, state))):
    t0 = time.perf_counter()
    tr = fn()
    dt = time.perf_counter() - t0
    out[name] = {"seconds": dt, "us_per_sample": 1e6 * dt / n, "checksum": float(np.sum(np.abs(tr.error) ** 2))}
print(json.dumps(out))
"""


def run(backend: str, samples: int) -> dict:
    env = dict(os.environ)
    env["FOLMS_DISABLE_NUMBA"] = "1" if backend == "python" else "0"
    res = subprocess.run([sys.executable, "-c", CHILD, str(samples)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20000, help="samples timed for the compiled backend")
    ap.add_argument("--fallback-samples", type=int, default=2000, help="samples timed for the fallback")
    args = ap.parse_args(argv)

    fast = run("numba", args.samples)
    slow = run("python", args.fallback_samples)
    print(f"{'kernel':<8}{'numba us/sample':>18}{'python us/sample':>19}{'speedup':>10}")
    for k in ("folms", "vss"):
        a, b = fast[k]["us_per_sample"], slow[k]["us_per_sample"]
        print(f"{k:<8}{a:>18.3f}{b:>19.1f}{b / a:>9.0f}x")
    if fast["backend"] != "numba":
        print("note: numba unavailable, both columns used the fallback")
    # equivalence on a common length
    same_a = run("numba", args.fallback_samples)
    for k in ("folms", "vss"):
        x, y = same_a[k]["checksum"], slow[k]["checksum"]
        print(f"{k} checksum agreement: rel diff {abs(x - y) / abs(y):.2e}")


if __name__ == "__main__":
    main()
