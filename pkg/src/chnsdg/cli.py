"""Command-line entry point: ``chnsdg {run, converge, validate-mesh, check-invariants}``.

Exit codes: 0 success, 2 configuration error, 3 Newton non-convergence,
4 invariant violation (bounds, mass, mesh hypothesis).
"""
from __future__ import annotations

import os

# cap BLAS/OpenMP pools before numpy is imported
_threads = os.environ.get("CHNS_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import logging
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_INVARIANT = 4


def _floats(text: str):
    return tuple(float(v) for v in text.split(","))


def _ints(text: str):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chnsdg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--config", type=Path, help="key = value config file; flags override it")
    r.add_argument("--scenario", choices=("accuracy", "circle", "bubble", "rayleigh", "custom"))
    r.add_argument("--nx", type=int)
    r.add_argument("--ny", type=int)
    r.add_argument("--dt", type=float)
    r.add_argument("--T", type=float, dest="T")
    r.add_argument("--steps", type=int, help="number of steps (sets T = steps * dt)")
    r.add_argument("--chi", type=float)
    for name in ("eps", "lam", "rho1", "rho2", "eta", "delta", "xi", "abs_tol", "rel_tol"):
        r.add_argument(f"--{name.replace('_', '-')}", type=float, dest=name)
    r.add_argument("--gravity", type=_floats, help="gx,gy")
    r.add_argument("--velocity", choices=("P2_bubble", "P2_cont"))
    r.add_argument("--pressure", choices=("P1_disc", "P0_disc"))
    r.add_argument("--backend", choices=("direct_lu", "gmres_ilu"))
    r.add_argument("--max-iter", type=int, dest="max_iter")
    r.add_argument("--damping", action=argparse.BooleanOptionalAction, default=None,
                   help="halve Newton steps that do not reduce the residual")
    r.add_argument("--stride", type=int)
    r.add_argument("--out", type=Path, dest="output_dir")
    r.add_argument("--restart", type=Path, help="state_XXXXXX.npz to continue from")

    c = sub.add_parser("converge", help="convergence orders of the accuracy scenario")
    c.add_argument("--meshes", type=_ints, default=[16, 24, 32])
    c.add_argument("--reference", type=int, default=96)
    c.add_argument("--dt", type=float, default=1e-5)
    c.add_argument("--T", type=float, dest="T", default=5e-4)

    m = sub.add_parser("validate-mesh", help="report the barycenter orthogonality defect")
    m.add_argument("--nx", type=int, default=4)
    m.add_argument("--ny", type=int)
    m.add_argument("--diagonals", choices=("checkerboard", "uniform"), default="checkerboard")

    k = sub.add_parser("check-invariants", help="replay a run directory's snapshots")
    k.add_argument("directory", type=Path)
    return ap


def _run_config(args):
    from .config import RunConfig
    from .sim import scenario_config

    keys = ("scenario", "nx", "ny", "dt", "T", "chi", "eps", "lam", "rho1", "rho2", "eta", "delta", "xi",
            "abs_tol", "rel_tol", "gravity", "velocity", "pressure", "backend", "max_iter", "damping", "stride",
            "output_dir")
    over = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if "output_dir" in over:
        over["output_dir"] = str(over["output_dir"])
    if args.config is not None:
        cfg = RunConfig.load(args.config, **over)
    else:
        cfg = scenario_config(over.pop("scenario", "circle"), **over)
    if args.steps is not None:
        cfg = cfg.replace(T=args.steps * cfg.dt)
    return cfg


def cmd_run(args) -> int:
    from .sim import run

    cfg = _run_config(args)

    def progress(k, rec):
        logging.info("step %d t=%.6g E=%.8g newton=%d min=%.3e max=%.3e",
                     k, rec.t, rec.E, rec.newton_iters, rec.phi_h_min, rec.phi_h_max)

    res = run(cfg, out_dir=cfg.output_dir, restart=args.restart, progress=progress)
    print(f"{res.steps} steps in {res.wall_time:.1f} s -> {res.directory}")
    return EXIT_OK


def cmd_converge(args) -> int:
    from .sim import convergence_harness

    tab = convergence_harness(args.meshes, args.reference, dt=args.dt, T=args.T)
    print(tab.format())
    return EXIT_OK


def cmd_validate_mesh(args) -> int:
    from .mesh import build_mesh, validate_hypothesis
    from .sim import DOMAIN

    mesh = build_mesh(DOMAIN, args.nx, args.ny or args.nx, diagonals=args.diagonals)
    defect = validate_hypothesis(mesh)
    print(f"mesh {mesh.nx}x{mesh.ny}: {mesh.n_interior_edges} interior edges, max orthogonality defect {defect:.3e}")
    return EXIT_OK


def cmd_check_invariants(args) -> int:
    from . import io
    from .config import RunConfig
    from .sim import setup

    d = args.directory
    cfg = RunConfig.load(d / "config.snapshot")
    prob = setup(cfg)
    snaps = sorted(d.glob("state_*.npz"))
    if not snaps:
        raise FileNotFoundError(f"no state snapshots in {d}")
    states = [io.load_state(p) for p in snaps]
    first, _ = states[0]
    first.refresh(prob.disc)
    # mass is compared against the first snapshot, bounds checked on each
    for new, k in states[1:]:
        new.refresh(prob.disc)
        try:
            rec = prob.system.post_step_checks(new, first, check=True)
        except Exception as exc:
            raise type(exc)(f"snapshot step {k}: {exc}") from exc
        print(f"step {k:6d}: phi_h in [{rec.phi_h_min:.10f}, {rec.phi_h_max:.10f}], mass {rec.mass:.15g}")
    print(f"{len(states)} snapshots ok")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "converge": cmd_converge,
    "validate-mesh": cmd_validate_mesh,
    "check-invariants": cmd_check_invariants,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    from .config import ConfigError
    from .mesh import HypothesisViolation, MeshError
    from .solver import LinearSolveFailure, NonConvergence
    from .system import BoundViolation, MassDrift

    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, LinearSolveFailure) as exc:
        step = getattr(exc, "step", None)
        print(f"solver failure{f' at step {step}' if step else ''}: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (BoundViolation, MassDrift, HypothesisViolation) as exc:
        step = getattr(exc, "step", None)
        print(f"invariant violation{f' at step {step}' if step else ''}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (MeshError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
