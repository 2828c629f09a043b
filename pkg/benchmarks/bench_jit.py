"""Time one adaptation with compiled kernels and with the pure-NumPy fallback.

Each mode runs in its own interpreter because the switch is read at import
time.  Usage::

    python benchmarks/bench_jit.py [--cube N] [--size H] [--repeat R]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = """
import json, sys, time
import numpy as np
from tetadapt import _jit
from tetadapt.mesh import cube_mesh
from tetadapt.pipeline import adapt
n, h, repeat = int(sys.argv[1]), float(sys.argv[2]), int(sys.argv[3])
m = cube_mesh(n)
M = np.tile([h ** -2, 0, h ** -2, 0, 0, h ** -2], (m.n_vertices, 1))
adapt(m, M)  # warm-up (compilation or cache load)
times = []
for _ in range(repeat):
    t0 = time.perf_counter()
    out, _ = adapt(m, M)
    times.append(time.perf_counter() - t0)
print(json.dumps({"jit": not _jit.DISABLE_JIT, "seconds": min(times), "n_vertices": out.n_vertices}))
"""


def run(disable, args):
    env = dict(os.environ, TETADAPT_DISABLE_JIT="1" if disable else "0")
    r = subprocess.run([sys.executable, "-c", CHILD, str(args.cube), str(args.size), str(args.repeat)],
                       env=env, capture_output=True, text=True, check=True)
    return json.loads(r.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cube", type=int, default=2, help="cells per side of the input cube")
    p.add_argument("--size", type=float, default=0.25, help="uniform target edge length")
    p.add_argument("--repeat", type=int, default=1)
    args = p.parse_args()
    fast = run(False, args)
    slow = run(True, args)
    print(f"compiled  {fast['seconds']:9.3f} s  ({fast['n_vertices']} vertices)")
    print(f"fallback  {slow['seconds']:9.3f} s  ({slow['n_vertices']} vertices)")
    print(f"speedup   {slow['seconds'] / fast['seconds']:9.1f}x")


if __name__ == "__main__":
    main()
