"""Time the compiled element kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--nx 64] [--repeat 5] [--steps 3]

With ``--steps N`` it also times N full circle time steps under each
backend, in fresh interpreters (the backend is fixed at import).

Both backends receive identical arrays taken from a real discretization;
the script also checks that their results agree.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from chnsdg import _kernels_py
from chnsdg.fespace import Discretization
from chnsdg.mesh import build_mesh

try:
    from chnsdg import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(disc, rng):
    nel, nq, nloc = disc.mesh.n_elements, disc.nq, disc.nloc_v
    w = rng.standard_normal((nel, nq, 2))
    U = rng.standard_normal((nel, 2, nloc))
    Wv = disc.W[..., None] * rng.standard_normal((nel, nq, 2))
    return {
        "convection_local": (disc.W, w, disc.Nv, disc.dNv),
        "velocity_gradients": (U, disc.dNv),
        "velocity_values": (U, disc.Nv),
        "weighted_product_local": (Wv, disc.Nv, disc.N1),
    }


_STEP_SCRIPT = """
import time
from chnsdg import kernels
from chnsdg.sim import advance, initial_fields, scenario_config, setup
prob = setup(scenario_config("circle", nx={nx}))
st = initial_fields(prob)
t = time.perf_counter()
for _ in range({steps}):
    st, rec = advance(prob, st)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def step_timing(nx, steps):
    code = _STEP_SCRIPT.format(nx=nx, steps=steps)
    for pure in ("1", "0"):
        env = dict(os.environ, CHNS_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"circle nx={nx}, {steps} steps, {backend:>6} kernels: {float(secs):7.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=0, help="also time full time steps")
    args = ap.parse_args()

    disc = Discretization(build_mesh((-0.5, 0.5, -0.5, 0.5), args.nx, args.nx))
    rng = np.random.default_rng(0)
    print(f"nx={args.nx}: {disc.mesh.n_elements} elements, {disc.nq} quadrature points per element")
    print(f"{'kernel':<24} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8}")
    for name, arrs in cases(disc, rng).items():
        arrs = tuple(np.ascontiguousarray(a, dtype=float) for a in arrs)
        f_py = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: f_py(*arrs), number=1, repeat=args.repeat))
        if _compiled is None:
            print(f"{name:<24} {1e3 * t_py:11.2f} {'n/a':>12} {'-':>8}")
            continue
        f_c = getattr(_compiled, name)
        t_c = min(timeit.repeat(lambda: f_c(*arrs), number=1, repeat=args.repeat))
        err = np.abs(f_c(*arrs) - f_py(*arrs)).max()
        print(f"{name:<24} {1e3 * t_py:11.2f} {1e3 * t_c:12.2f} {t_py / t_c:8.2f}  (max diff {err:.1e})")
    if args.steps:
        step_timing(args.nx, args.steps)


if __name__ == "__main__":
    main()
