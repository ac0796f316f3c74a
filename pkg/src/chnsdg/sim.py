"""Scenarios, the time loop with diagnostics, and the convergence harness."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .config import RunConfig
from .fespace import Discretization, interpolate_initial, interpolate_velocity
from .forms import Params, pos
from .mesh import MeshError, build_mesh, validate_hypothesis
from .solver import NewtonConfig, newton_solve
from .system import CoupledSystem, DiagnosticsRecord, State

log = logging.getLogger(__name__)

DOMAIN = (-0.5, 0.5, -0.5, 0.5)


# ----------------------------------------------------------------------
# scenarios
@dataclass
class Scenario:
    name: str
    phi0: Callable
    u0: Callable
    gravity: tuple[float, float] = (0.0, 0.0)
    defaults: dict = field(default_factory=dict)


def two_circles(eps: float) -> Callable:
    w = math.sqrt(2.0) * eps

    def phi0(x, y):
        r1 = np.sqrt((x - 0.1) ** 2 + (y - 0.1) ** 2)
        r2 = np.sqrt((x + 0.15) ** 2 + (y + 0.15) ** 2)
        return 2.0 * np.tanh((pos(0.25 - r1) + pos(0.15 - r2)) / w) - 1.0

    return phi0


def swirl(chi: float) -> Callable:
    def u0(x, y):
        cut = pos(0.16 - (x * x + y * y))
        return chi * y * cut, -chi * x * cut

    return u0


def _still(x, y):
    z = np.zeros_like(np.asarray(x, dtype=float))
    return z, z.copy()


def make_scenario(name: str, eps: float = 0.01, chi: float | None = None) -> Scenario:
    # the long runs enable backtracking: plain Newton can cycle between upwind switch patterns
    w = math.sqrt(2.0) * eps
    if name == "accuracy":
        return Scenario(name, two_circles(eps), swirl(1.0 if chi is None else chi),
                        defaults=dict(nx=32, dt=1e-5, T=5e-4, chi=1.0))
    if name == "circle":
        return Scenario(name, two_circles(eps), swirl(100.0 if chi is None else chi),
                        defaults=dict(nx=32, dt=1e-3, T=5e-2, chi=100.0, damping=True))
    if name == "bubble":
        return Scenario(name, lambda x, y: np.tanh((0.2 - np.sqrt(x * x + y * y)) / w), _still,
                        gravity=(0.0, 1.0), defaults=dict(nx=32, dt=1e-4, T=1e-2, chi=0.0, damping=True))
    if name == "rayleigh":
        return Scenario(name, lambda x, y: np.tanh((y - 0.1 * np.exp(-((x + 0.2) ** 2) / 0.1)) / w), _still,
                        gravity=(0.0, 1.0), defaults=dict(nx=32, dt=1e-4, T=1e-2, chi=0.0, damping=True))
    if name == "custom":
        # a pure phase at rest; callers replace the closures
        return Scenario(name, lambda x, y: np.ones_like(np.asarray(x, dtype=float)), _still,
                        defaults=dict(nx=16, dt=1e-3, T=1e-2, chi=0.0))
    raise ValueError(f"unknown scenario {name!r}")


def scenario_config(name: str, **overrides) -> RunConfig:
    """Run configuration with the scenario's built-in defaults."""
    sc = make_scenario(name)
    kw = dict(scenario=name, gravity=sc.gravity, output_dir=f"runs/{name}", **sc.defaults)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kw)


# ----------------------------------------------------------------------
@dataclass
class Problem:
    config: RunConfig
    scenario: Scenario
    disc: Discretization
    params: Params
    system: CoupledSystem
    newton: NewtonConfig


def setup(config: RunConfig, scenario: Scenario | None = None) -> Problem:
    mesh = build_mesh(DOMAIN, config.nx, config.ny)
    validate_hypothesis(mesh)
    disc = Discretization(mesh, velocity=config.velocity, pressure=config.pressure)
    params = Params(
        eps=config.eps, lam=config.lam, rho1=config.rho1, rho2=config.rho2, eta=config.eta,
        dt=config.dt, delta=config.delta, xi=config.xi, gravity=config.gravity,
    )
    newton = NewtonConfig(
        abs_tol=config.abs_tol, rel_tol=config.rel_tol, max_iter=config.max_iter, damping=config.damping,
        linear_backend=config.backend, gmres_tol=config.gmres_tol, gmres_restart=config.gmres_restart,
    )
    if scenario is None:
        scenario = make_scenario(config.scenario, eps=config.eps, chi=config.chi)
    return Problem(config, scenario, disc, params, CoupledSystem(disc, params), newton)


def initial_fields(problem: Problem) -> State:
    """Element means of phi0, nodal velocity, zero pressure, mu from the potential equation."""
    disc, sysm = problem.disc, problem.system
    phi = interpolate_initial(disc, problem.scenario.phi0, disc.P0).coeffs
    u = interpolate_velocity(disc, problem.scenario.u0).coeffs
    st = State(u, np.zeros(disc.Q.size), phi, sysm.initial_mu(phi), 0.0)
    return st.refresh(disc)


def advance(problem: Problem, state: State, check: bool = True) -> tuple[State, DiagnosticsRecord]:
    """One time step: Newton solve plus post-step checks."""
    sysm = problem.system
    sysm.set_old_state(state)
    x, its, hist = newton_solve(sysm, problem.newton)
    new = sysm.unpack(x, state.t + problem.params.dt).refresh(problem.disc)
    rec = sysm.post_step_checks(new, state, its, check=check)
    return new, rec


@dataclass
class RunResult:
    directory: Path | None
    records: list
    state: State
    steps: int
    wall_time: float
    problem: Problem | None = None


def run(
    config: RunConfig,
    out_dir=None,
    scenario: Scenario | None = None,
    restart: str | Path | None = None,
    write_fields: bool = True,
    progress: Callable | None = None,
) -> RunResult:
    """Execute ``config.steps`` time steps (or the remainder after a restart).

    Writes ``config.snapshot``, ``diagnostics.csv`` and, every ``stride``
    steps, ``fields_XXXXXX.vtk`` plus an exact ``state_XXXXXX.npz``.
    Solver failures are re-raised with the failing step attached as
    ``exc.step``; files written so far are kept.
    """
    t0 = time.perf_counter()
    problem = setup(config, scenario)
    if restart is not None:
        state, start = io.load_state(restart)
        state.refresh(problem.disc)
    else:
        state, start = initial_fields(problem), 0

    out = None if out_dir is None and not write_fields else Path(out_dir or config.output_dir)
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.snapshot")
        writer = io.DiagnosticsWriter(out / "diagnostics.csv", DiagnosticsRecord.CSV_COLUMNS)

    def dump(st, k):
        if out is not None and write_fields:
            io.write_vtk(st, problem.disc, out / f"fields_{k:06d}.vtk")
            io.save_state(out / f"state_{k:06d}.npz", st, k)

    records = []
    try:
        if start == 0:
            dump(state, 0)
        for k in range(start + 1, config.steps + 1):
            try:
                state, rec = advance(problem, state, check=config.check_invariants)
            except Exception as exc:
                exc.step = k
                log.error("step %d failed: %s", k, exc)
                raise
            records.append(rec)
            if writer is not None:
                writer.write(rec.csv_row())
            if k % config.stride == 0 or k == config.steps:
                dump(state, k)
            if progress is not None:
                progress(k, rec)
    finally:
        if writer is not None:
            writer.close()
    return RunResult(out, records, state, config.steps - start, time.perf_counter() - t0, problem)


# ----------------------------------------------------------------------
# convergence harness
@dataclass
class ConvergenceTable:
    nx: list
    h: list
    errors: dict  # name -> list of errors per mesh
    orders: dict  # name -> list of orders between consecutive meshes
    wall_time: float = 0.0

    VARIABLES = ("phi_h_L2", "phi_h_H1", "u_L2", "u_H1", "p_L2")

    def format(self) -> str:
        head = f"{'nx':>5} {'h':>10} " + " ".join(f"{v:>11} {'order':>6}" for v in self.VARIABLES)
        rows = [head]
        for i, n in enumerate(self.nx):
            cells = []
            for v in self.VARIABLES:
                o = f"{self.orders[v][i - 1]:6.2f}" if i > 0 else f"{'-':>6}"
                cells.append(f"{self.errors[v][i]:11.3e} {o}")
            rows.append(f"{n:>5} {self.h[i]:10.3e} " + " ".join(cells))
        return "\n".join(rows)


def check_nested(coarse, fine) -> None:
    """Raise unless every fine element lies inside a single coarse element."""
    if fine.nx % coarse.nx or fine.ny % coarse.ny:
        raise MeshError(f"mesh {fine.nx}x{fine.ny} is not a refinement of {coarse.nx}x{coarse.ny}")
    owner = coarse.locate(fine.barycenters)
    x0 = coarse.vertices[coarse.elements[owner, 0]]
    e1 = coarse.vertices[coarse.elements[owner, 1]] - x0
    e2 = coarse.vertices[coarse.elements[owner, 2]] - x0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    tol = 1e-10
    for a in range(3):
        d = fine.vertices[fine.elements[:, a]] - x0
        s = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        t = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        if np.any(s < -tol) or np.any(t < -tol) or np.any(s + t > 1 + tol):
            raise MeshError(f"mesh {fine.nx}x{fine.ny} is not nested in {coarse.nx}x{coarse.ny}")


def field_errors(coarse: Problem, cst: State, fine: Problem, fst: State) -> dict:
    """Errors of a coarse solution against a fine one at coarse quadrature points."""
    dc, df = coarse.disc, fine.disc
    pts = dc.qpoints.reshape(-1, 2)
    W = dc.W.ravel()

    ph_c = dc.p1_at_quad(cst.phih).ravel()
    gph_c = np.repeat(dc.p1_grad(cst.phih), dc.nq, axis=0)
    ph_f, gph_f = df.eval_p1(fst.phih, pts)

    uc, guc = dc.velocity_at_quad(cst.u)
    uc, guc = uc.reshape(-1, 2), guc.reshape(-1, 2, 2)
    uf, guf = df.eval_velocity(fst.u, pts)

    pc = dc.pressure_at_quad(cst.p).ravel()
    pf = df.eval_pressure(fst.p, pts)

    def l2(e):
        e = e.reshape(len(W), -1)
        return float(np.sqrt(np.sum(W[:, None] * e * e)))

    phi_l2 = l2(ph_c - ph_f)
    u_l2 = l2(uc - uf)
    return {
        "phi_h_L2": phi_l2,
        "phi_h_H1": math.hypot(phi_l2, l2(gph_c - gph_f)),
        "u_L2": u_l2,
        "u_H1": math.hypot(u_l2, l2(guc - guf)),
        "p_L2": l2(pc - pf),
    }


def convergence_harness(
    mesh_list,
    reference_nx: int,
    dt: float = 1e-5,
    T: float = 5e-4,
    base: RunConfig | None = None,
    progress: Callable | None = None,
) -> ConvergenceTable:
    """Run the accuracy scenario on each mesh and on the reference mesh and tabulate errors."""
    t0 = time.perf_counter()
    mesh_list = [int(n) for n in mesh_list]
    base = base or scenario_config("accuracy")
    base = base.replace(dt=dt, T=T, check_invariants=True)
    ref_mesh = build_mesh(DOMAIN, reference_nx, reference_nx)
    for n in mesh_list:
        if reference_nx % n:
            raise MeshError(f"reference_nx={reference_nx} is not a multiple of nx={n}")
        check_nested(build_mesh(DOMAIN, n, n), ref_mesh)

    def solve(n):
        cfg = base.replace(nx=n, ny=n)
        res = run(cfg, write_fields=False)
        if progress is not None:
            progress(n, res)
        return res.problem, res.state

    ref_prob, ref_state = solve(reference_nx)
    errors = {v: [] for v in ConvergenceTable.VARIABLES}
    hs = []
    for n in mesh_list:
        if n == reference_nx:
            prob, st = ref_prob, ref_state
        else:
            prob, st = solve(n)
        hs.append(prob.disc.mesh.h)
        for k, v in field_errors(prob, st, ref_prob, ref_state).items():
            errors[k].append(v)
    orders = {}
    for v, e in errors.items():
        orders[v] = [
            math.log(e[i - 1] / e[i]) / math.log(hs[i - 1] / hs[i]) if e[i] > 0 and e[i - 1] > 0 else float("nan")
            for i in range(1, len(e))
        ]
    return ConvergenceTable(mesh_list, hs, errors, orders, time.perf_counter() - t0)
