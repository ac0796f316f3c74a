import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chnsdg import forms as F
from chnsdg.fespace import project_grad_P1
from conftest import random_velocity
from oracle import Oracle

PARAMS = F.Params(dt=1e-3)


# ----------------------------------------------------------------------
# scalar functions
def test_mobility_values():
    assert F.mobility(0.0) == 1.0 and F.mobility(1.0) == 0.0 and F.mobility(-1.0) == 0.0 and F.mobility(2.0) == 0.0
    assert F.mobility_up(0.5) == 1.0 and F.mobility_down(0.5) == -0.25
    assert F.mobility_up(0.5) + F.mobility_down(0.5) == F.mobility(0.5) == 0.75
    assert F.mobility_up(-0.5) == 0.75 and F.mobility_down(-0.5) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_mobility_split(a, b):
    assert abs(F.mobility_up(a) + F.mobility_down(a) - F.mobility(a)) <= 1e-15
    lo, hi = min(a, b), max(a, b)
    assert F.mobility_up(lo) <= F.mobility_up(hi)
    assert F.mobility_down(lo) >= F.mobility_down(hi)


def test_mobility_derivatives_match_differences():
    z = np.array([-0.7, -0.2, 0.3, 0.8, 1.4, -1.3])
    h = 1e-7
    for f, df in ((F.mobility, F.d_mobility), (F.mobility_up, F.d_mobility_up), (F.mobility_down, F.d_mobility_down)):
        np.testing.assert_allclose(df(z), (f(z + h) - f(z - h)) / (2 * h), atol=1e-6)


def test_potential_f():
    assert F.potential_f(1.0, 1.0) == 0.0 and F.potential_f(-1.0, -1.0) == 0.0
    assert abs(F.potential_f(0.5, 0.5) - (-0.375)) < 1e-15
    assert abs(F.potential_f(0.2, -0.7) - 2.157) < 1e-14


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_convex_splitting_pointwise(p1, p0):
    # f(p1, p0)(p1 - p0) >= F(p1) - F(p0) for p0 in [-1, 1]
    lhs = F.potential_f(p1, p0) * (p1 - p0)
    assert lhs - (F.potential_F(p1) - F.potential_F(p0)) >= -1e-15


def test_density():
    assert F.density(PARAMS, -1.0) == 1.0 and F.density(PARAMS, 1.0) == 100.0
    assert F.density(PARAMS, 0.0) == 50.5
    z = np.linspace(-1, 1, 41)
    r = F.density(PARAMS, z)
    assert r.min() >= 1.0 and r.max() <= 100.0


def test_params_validation():
    with pytest.raises(ValueError):
        F.Params(eps=0.0)
    with pytest.raises(ValueError):
        F.Params(rho1=2.0, rho2=1.0)
    with pytest.raises(ValueError):
        F.Params(delta=-1.0)
    assert F.Params(rho1=1.0, rho2=1.0).rho_dif == 0.0


# ----------------------------------------------------------------------
# single-edge fixtures
def test_a_upw_single_edge():
    w = np.array([[1.0]])
    assert F.a_upw_edge_flux(np.array([[2.0]]), w, np.array([0.3]), np.array([-0.1]))[0] == pytest.approx(0.6, abs=1e-15)
    assert F.a_upw_edge_flux(np.array([[-2.0]]), w, np.array([0.3]), np.array([-0.1]))[0] == pytest.approx(0.2, abs=1e-15)


def test_b_upw_single_edge():
    v = F.b_upw_edge_flux(np.array([0.4]), np.array([0.5]), np.array([-0.5]), np.array([1.0]), np.array([0.1]))
    assert v[0] == pytest.approx(4.0, rel=1e-14)
    v = F.b_upw_edge_flux(np.array([-0.4]), np.array([0.5]), np.array([-0.5]), np.array([1.0]), np.array([0.1]))
    # flux takes (Mup(-0.5) + Mdown(0.5))+ = (0.75 - 0.25) = 0.5
    assert v[0] == pytest.approx(-4.0 * 0.5, rel=1e-14)


def test_s_h_single_edge():
    w, ubn, un, jphi, jmu = 1.0, 1.0, -3.0, 0.2, 0.5
    val = -0.5 * w * ubn * F.sign_regularized(np.array(un), 0.0) * jphi * jmu
    assert val == pytest.approx(0.05, abs=1e-16)
    assert F.sign_regularized(np.array(0.0), 0.0) == 0.0
    assert F.sign_regularized(np.array(-3.0), 1.0) == -0.75


# ----------------------------------------------------------------------
# whole-mesh properties
def _fields(disc, rng):
    nel, nv = disc.mesh.n_elements, disc.mesh.n_vertices
    return dict(
        u=random_velocity(disc, rng), ub=random_velocity(disc, rng),
        phi=rng.uniform(-1, 1, nel), phib=rng.standard_normal(nel),
        mu=rng.standard_normal(nv), mu0=rng.standard_normal(nel),
        ph1=rng.uniform(-1, 1, nv), ph0=rng.uniform(-1, 1, nv),
    )


def test_a_upw_conserves_mass(disc4, rng):
    f = _fields(disc4, rng)
    assert abs(F.form_a_upw(disc4, f["u"], f["phi"], np.ones(disc4.mesh.n_elements))) < 1e-13


def test_b_upw_constant_mu_vanishes(disc4, rng):
    f = _fields(disc4, rng)
    assert F.form_b_upw(disc4, np.full(disc4.mesh.n_vertices, 2.5), f["phi"], f["phib"]) == pytest.approx(0, abs=1e-13)


def test_b_upw_requires_validated_mesh():
    from chnsdg.fespace import Discretization
    from chnsdg.mesh import HypothesisViolation, build_mesh

    d = Discretization(build_mesh((-0.5, 0.5, -0.5, 0.5), 2, 2, diagonals="uniform"))
    with pytest.raises(HypothesisViolation):
        F.assemble_b_upw(d, np.zeros(9), np.zeros(8))


def test_b_upw_nonnegative_on_projected_mu(disc4):
    rng = np.random.default_rng(3)
    for _ in range(100):
        mu = rng.standard_normal(disc4.mesh.n_vertices) * rng.uniform(0.1, 10)
        phi = rng.uniform(-1.3, 1.3, disc4.mesh.n_elements)
        assert F.form_b_upw(disc4, mu, phi, disc4.mean_P0 @ mu) >= 0.0


def test_c_h_constant_fields_vanish(disc4, rng):
    f = _fields(disc4, rng)
    nel = disc4.mesh.n_elements
    assert abs(F.form_c_h(disc4, np.full(nel, 0.7), np.full(nel, -1.3), f["ub"])) < 1e-13
    # mu0 constant: only the volume term survives
    div = F.assemble_divergence(disc4)
    ones_q = np.zeros(disc4.Q.size)
    # element integrals of div ubar from the P1_disc partition of unity
    ones_q[:] = 1.0
    vol = F.element_divergence_integrals(disc4)
    got = F.form_c_h(disc4, f["phi"], np.full(nel, 2.0), f["ub"])
    ub_loc = f["ub"][np.concatenate([disc4.V.dof_map, disc4.V.dof_count + disc4.V.dof_map], axis=1)]
    want = -2.0 * np.sum(f["phi"] * np.einsum("kb,kb->k", vol.reshape(nel, -1), ub_loc))
    assert got == pytest.approx(want, rel=1e-12, abs=1e-13)
    assert abs(ones_q @ div @ f["ub"]) < 1e-13


def test_s_h_zero_cases(disc4, rng):
    f = _fields(disc4, rng)
    nel = disc4.mesh.n_elements
    assert F.form_s_h(disc4, np.zeros(disc4.V.size), f["phi"], f["mu0"], f["ub"], 0.0) == 0.0
    assert F.form_s_h(disc4, f["u"], np.full(nel, 0.3), f["mu0"], f["ub"], 1e-6) == 0.0


def test_s_h_delta_tends_to_sign(disc4, rng):
    f = _fields(disc4, rng)
    exact = F.form_s_h(disc4, f["u"], f["phi"], f["mu0"], f["ub"], 0.0)
    approx = F.form_s_h(disc4, f["u"], f["phi"], f["mu0"], f["ub"], 1e-12)
    assert approx == pytest.approx(exact, rel=1e-8)


def test_J_h_vanishing_cases(disc4, rng):
    nv = disc4.mesh.n_vertices
    g = project_grad_P1(disc4, np.full(nv, 3.0))
    assert np.abs(F.form_J_h(disc4, rng.uniform(-1, 1, nv), g, PARAMS)).max() < 1e-12
    g = project_grad_P1(disc4, rng.standard_normal(nv))
    assert np.abs(F.form_J_h(disc4, np.ones(nv), g, PARAMS)).max() < 1e-12
    matched = F.Params(rho1=3.0, rho2=3.0)
    assert np.abs(F.form_J_h(disc4, rng.uniform(-1, 1, nv), g, matched)).max() == 0.0


def test_t_h_vanishes_at_rest(disc4, rng):
    f = _fields(disc4, rng)
    nv = disc4.mesh.n_vertices
    g = project_grad_P1(disc4, np.full(nv, 1.0))
    v = F.form_t_h(disc4, f["u"], np.zeros(disc4.V.size), f["ph0"], f["ph0"], g, f["ub"], PARAMS)
    assert abs(v) < 1e-12


def test_stokes_forms_trivial_cases(disc4, rng):
    f = _fields(disc4, rng)
    n = disc4.V.dof_count
    nb = disc4.mesh.n_elements  # bubbles carry no constant part
    trans = np.concatenate([np.full(n, 0.4), np.full(n, -1.1)])
    trans[n - nb : n] = 0.0
    trans[2 * n - nb :] = 0.0
    assert abs(F.form_viscous(disc4, trans, f["ub"], 1.0)) < 1e-12
    assert abs(F.form_divergence(disc4, f["u"], np.ones(disc4.Q.size))) < 1e-13
    assert F.form_gravity(disc4, f["ph1"], f["ub"], PARAMS) == 0.0


def test_cancellation_identity(disc4):
    rng = np.random.default_rng(11)
    for _ in range(20):
        f = _fields(disc4, rng)
        lhs = F.form_a_upw(disc4, f["u"], f["phi"], f["mu0"])
        c, up = F.a_upw_centered_split(disc4, f["u"], f["phi"], f["mu0"])
        assert abs(lhs - (c + up)) <= 1e-12 * max(1.0, abs(lhs))


def test_convex_splitting_integral(disc4):
    rng = np.random.default_rng(5)
    for _ in range(50):
        p1 = rng.uniform(-1, 1, disc4.mesh.n_vertices)
        p0 = rng.uniform(-1, 1, disc4.mesh.n_vertices)
        assert F.convex_splitting_defect(disc4, p1, p0, 1e-3) >= -1e-12


# ----------------------------------------------------------------------
# linearity in the test argument and assembly consistency
def _test_linear_forms(disc, f, g):
    return {
        "a_upw": (lambda t: F.form_a_upw(disc, f["u"], f["phi"], t), "P0"),
        "b_upw": (lambda t: F.form_b_upw(disc, f["mu"], f["phi"], t), "P0"),
        "c_h": (lambda t: F.form_c_h(disc, f["phi"], f["mu0"], t), "V"),
        "s_h": (lambda t: F.form_s_h(disc, f["u"], f["phi"], f["mu0"], t, 1e-6), "V"),
        "t_h": (lambda t: F.form_t_h(disc, f["u"], f["ub"], f["ph1"], f["ph0"], g, t, PARAMS), "V"),
        "viscous": (lambda t: F.form_viscous(disc, f["u"], t, 1.0), "V"),
        "pressure": (lambda t: F.form_pressure(disc, np.arange(disc.Q.size, dtype=float), t), "V"),
        "gravity": (lambda t: F.form_gravity(disc, f["ph1"], t, F.Params(gravity=(0.3, 1.0))), "V"),
    }


def test_forms_linear_in_test_argument(disc4, rng):
    f = _fields(disc4, rng)
    g = project_grad_P1(disc4, f["mu"])
    for name, (form, space) in _test_linear_forms(disc4, f, g).items():
        n = disc4.mesh.n_elements if space == "P0" else disc4.V.size
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        a, b = rng.standard_normal(2)
        lhs = form(a * x + b * y)
        rhs = a * form(x) + b * form(y)
        assert abs(lhs - rhs) <= 1e-12 * (abs(a * form(x)) + abs(b * form(y)) + 1), name


def test_assembly_matches_evaluation(disc4, rng):
    f = _fields(disc4, rng)
    ub, phib = f["ub"], f["phib"]
    g = project_grad_P1(disc4, f["mu"])
    pairs = [
        (F.assemble_a_upw(disc4, f["u"], f["phi"]) @ phib, F.form_a_upw(disc4, f["u"], f["phi"], phib)),
        (F.assemble_c_h(disc4, f["phi"], f["mu0"]) @ ub, F.form_c_h(disc4, f["phi"], f["mu0"], ub)),
        (ub @ F.assemble_viscous(disc4, 1.0) @ f["u"], F.form_viscous(disc4, f["u"], ub, 1.0)),
        (F.assemble_t_h(disc4, f["u"], f["ub"], f["ph1"], f["ph0"], g, PARAMS) @ ub,
         F.form_t_h(disc4, f["u"], f["ub"], f["ph1"], f["ph0"], g, ub, PARAMS)),
    ]
    # convection local matrices against the direct quadrature evaluation
    w = F.transport_field(disc4, f["ub"], f["ph0"], g, PARAMS)
    loc = F.block_diag_local(F.convection_local(disc4, w))
    dofs = F.velocity_dofs_local(disc4)
    C = F.scatter_matrix(dofs, dofs, loc, (disc4.V.size,) * 2)
    pairs.append((ub @ C @ f["u"], F.form_convection(disc4, w, f["u"], ub)))
    for got, want in pairs:
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


# ----------------------------------------------------------------------
# independent oracle on the 2x2 mesh
@pytest.mark.parametrize("seed", range(5))
def test_forms_against_oracle(disc2, seed):
    rng = np.random.default_rng(100 + seed)
    o = Oracle(disc2.mesh, PARAMS.rho1, PARAMS.rho2)
    f = _fields(disc2, rng)
    g = project_grad_P1(disc2, f["mu"])
    np.testing.assert_allclose(g, o.grad_projection(f["mu"]), rtol=1e-12, atol=1e-13)
    mu0 = disc2.mean_P0 @ f["mu"]
    checks = [
        (F.form_a_upw(disc2, f["u"], f["phi"], f["phib"]), o.a_upw(f["u"], f["phi"], f["phib"])),
        (F.form_b_upw(disc2, f["mu"], f["phi"], f["phib"]), o.b_upw(f["mu"], f["phi"], f["phib"])),
        (F.form_c_h(disc2, f["phi"], mu0, f["ub"]), o.c_h(f["phi"], mu0, f["ub"])),
        (F.form_s_h(disc2, f["u"], f["phi"], mu0, f["ub"], 1e-6), o.s_h(f["u"], f["phi"], mu0, f["ub"], 1e-6)),
        (F.form_s_h(disc2, f["u"], f["phi"], mu0, f["ub"], 0.0), o.s_h(f["u"], f["phi"], mu0, f["ub"], 0.0)),
        (F.form_t_h(disc2, f["u"], f["ub"], f["ph1"], f["ph0"], g, f["ub"], PARAMS),
         o.t_h(f["u"], f["ub"], f["ph1"], f["ph0"], g, f["ub"], PARAMS.dt)),
        (F.form_viscous(disc2, f["u"], f["ub"], 1.0), o.viscous(f["u"], f["ub"], 1.0)),
        (F.form_divergence(disc2, f["u"], np.arange(24.0)), o.divergence(f["u"], np.arange(24.0))),
    ]
    gp = F.Params(gravity=(0.0, 1.0))
    checks.append((F.form_gravity(disc2, f["ph1"], f["ub"], gp), o.gravity(f["ph1"], f["ub"], (0.0, 1.0))))
    for got, want in checks:
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))
