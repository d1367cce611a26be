"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time from ``LATTICE_TOPO_DISABLE_NUMBA``.  Results are checked for
agreement before timings are reported.

    python benchmarks/bench_kernels.py [--dim 256] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, sys, time
import numpy as np
from lattice_topo._jit import backend
from lattice_topo.homology import sublevel_components, sublevel_holes
from lattice_topo.mvn import orthant_probability

dim, repeat = int(sys.argv[1]), int(sys.argv[2])
z = np.random.default_rng(0).normal(size=(dim, dim)).cumsum(axis=0)
cov = np.full((8, 8), 0.4) + 0.6 * np.eye(8)

def best(fn):
    fn()  # warm-up, includes compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out

t_sweep, (c, h) = best(lambda: (sublevel_components(z), sublevel_holes(z)))
t_sov, res = best(lambda: orthant_probability(cov, 0.0, max_points=2**15))
digest = hashlib.sha256(c.points.tobytes() + h.points.tobytes()).hexdigest()[:16]
print(json.dumps({"backend": backend(), "sweep_s": t_sweep, "sov_s": t_sov,
                  "diagram_digest": digest, "orthant": res.probability}))
"""


def run(disable, dim, repeat):
    env = dict(os.environ, LATTICE_TOPO_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(dim), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast = run(False, args.dim, args.repeat)
    slow = run(True, args.dim, args.repeat)
    if fast["backend"] != "numba":
        print("numba is not available; both runs used numpy", file=sys.stderr)
    same = fast["diagram_digest"] == slow["diagram_digest"]
    diff = abs(fast["orthant"] - slow["orthant"])
    print(f"{'kernel':<28}{'numba s':>10}{'numpy s':>10}{'speed-up':>10}")
    for key, label in (("sweep_s", f"union-find sweep {args.dim}^2"), ("sov_s", "QMC orthant, k=8")):
        print(f"{label:<28}{fast[key]:>10.3f}{slow[key]:>10.3f}{slow[key] / fast[key]:>9.1f}x")
    print(f"diagrams identical: {same}; orthant difference: {diff:.1e}")
    return 0 if same and diff < 1e-12 else 1


if __name__ == "__main__":
    sys.exit(main())
