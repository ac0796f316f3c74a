import math

import numpy as np
import pytest

from chnsdg import io
from chnsdg.mesh import MeshError, build_mesh
from chnsdg.sim import (
    DOMAIN, ConvergenceTable, check_nested, convergence_harness, field_errors, initial_fields,
    make_scenario, run, scenario_config, setup,
)


def test_bubble_initial_profile():
    sc = make_scenario("bubble")
    assert sc.phi0(0.0, 0.0) == pytest.approx(math.tanh(0.2 / (math.sqrt(2) * 0.01)), rel=1e-15)
    assert sc.gravity == (0.0, 1.0)


@pytest.mark.parametrize("name", ["accuracy", "circle", "bubble", "rayleigh", "custom"])
def test_initial_fields(name):
    prob = setup(scenario_config(name, nx=8))
    st = initial_fields(prob)
    assert st.phi.min() >= -1 and st.phi.max() <= 1
    assert st.phih.min() >= -1 and st.phih.max() <= 1
    assert np.all(st.u[prob.disc.velocity_fixed] == 0)
    if name in ("bubble", "rayleigh", "custom"):
        assert not st.u.any()
    assert not st.p.any()


def test_swirl_velocity_nodal_values():
    prob = setup(scenario_config("circle", nx=8))
    st = initial_fields(prob)
    v = prob.disc.mesh.vertices
    n = prob.disc.V.dof_count
    r2 = (v ** 2).sum(axis=1)
    np.testing.assert_allclose(st.u[: len(v)], 100 * v[:, 1] * np.maximum(0.16 - r2, 0), atol=1e-13)
    np.testing.assert_allclose(st.u[n : n + len(v)], -100 * v[:, 0] * np.maximum(0.16 - r2, 0), atol=1e-13)


def test_unknown_scenario():
    with pytest.raises(ValueError):
        make_scenario("vortex")


def test_run_writes_outputs(tmp_path):
    cfg = scenario_config("circle", nx=4, T=3e-3, stride=2)
    res = run(cfg, out_dir=tmp_path)
    assert res.steps == 3 and len(res.records) == 3
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "config.snapshot" in names and "diagnostics.csv" in names
    assert [n for n in names if n.startswith("state_")] == ["state_000000.npz", "state_000002.npz", "state_000003.npz"]
    d = io.read_diagnostics(tmp_path / "diagnostics.csv")
    assert len(d["t"]) == 3
    np.testing.assert_allclose(d["t"], [1e-3, 2e-3, 3e-3], rtol=1e-12)


def test_restart_is_bitwise_identical(tmp_path):
    cfg = scenario_config("circle", nx=4, T=4e-3, stride=2)
    full = run(cfg, out_dir=tmp_path / "a")
    resumed = run(cfg, out_dir=tmp_path / "b", restart=tmp_path / "a" / "state_000002.npz")
    assert resumed.steps == 2
    for name in ("u", "p", "phi", "mu"):
        assert np.array_equal(getattr(full.state, name), getattr(resumed.state, name))


def test_failure_carries_step(tmp_path):
    cfg = scenario_config("circle", nx=4, T=2e-3, max_iter=1)
    with pytest.raises(Exception) as err:
        run(cfg, out_dir=tmp_path)
    assert err.value.step == 1


def test_nested_meshes():
    check_nested(build_mesh(DOMAIN, 2, 2), build_mesh(DOMAIN, 6, 6))
    check_nested(build_mesh(DOMAIN, 4, 4), build_mesh(DOMAIN, 8, 8))
    with pytest.raises(MeshError):
        check_nested(build_mesh(DOMAIN, 4, 4), build_mesh(DOMAIN, 6, 6))


def test_field_errors_vanish_for_identical_solutions():
    prob = setup(scenario_config("accuracy", nx=4))
    st = initial_fields(prob)
    err = field_errors(prob, st, prob, st)
    assert max(err.values()) < 1e-13


def test_field_errors_detect_differences():
    cp = setup(scenario_config("accuracy", nx=4))
    fp = setup(scenario_config("accuracy", nx=8))
    e = field_errors(cp, initial_fields(cp), fp, initial_fields(fp))
    assert e["phi_h_L2"] > 0 and e["phi_h_H1"] >= e["phi_h_L2"] and e["u_H1"] >= e["u_L2"]


def test_harness_rejects_non_nested():
    with pytest.raises(MeshError):
        convergence_harness([6], 16, dt=1e-5, T=1e-5)


def test_harness_smoke():
    tab = convergence_harness([4, 8], 8, dt=1e-5, T=2e-5)
    assert isinstance(tab, ConvergenceTable)
    assert all(tab.errors[v][1] < 1e-12 for v in tab.VARIABLES)
    assert all(tab.errors[v][0] > 0 for v in ("phi_h_L2", "u_L2"))
    assert "order" in tab.format()


def test_pure_phase_at_rest_is_stationary():
    res = run(scenario_config("custom", nx=4, T=3e-3), write_fields=False)
    for name in ("mass", "phi_min", "phi_max", "phi_h_min", "phi_h_max", "E", "E_kin", "E_grad", "E_pot"):
        vals = [getattr(r, name) for r in res.records]
        assert max(vals) - min(vals) <= 1e-14, name
    assert not res.state.u.any() or np.abs(res.state.u).max() < 1e-14


def _polynomial_state(prob):
    """Exactly representable fields: quadratic u, linear Pi1h phi and p."""
    st = initial_fields(prob)
    m = prob.disc.mesh
    nodes = np.vstack([m.vertices, m.edge_midpoints])
    x, y = nodes[:, 0], nodes[:, 1]
    n = prob.disc.V.dof_count
    st.u = np.zeros(2 * n)
    st.u[: len(nodes)] = x * y + 0.3 * x * x - y
    st.u[n : n + len(nodes)] = 2 * x * x - y * y + 0.5
    st.phih = m.vertices @ np.array([1.0, 2.0])
    st.p = (m.vertices[m.elements] @ np.array([3.0, -1.0])).ravel()
    return st


def test_cross_mesh_transfer_is_exact_for_polynomials():
    cp = setup(scenario_config("accuracy", nx=4))
    fp = setup(scenario_config("accuracy", nx=12))
    err = field_errors(cp, _polynomial_state(cp), fp, _polynomial_state(fp))
    assert max(err.values()) < 1e-13
