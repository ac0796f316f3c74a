"""Constitutive functions and the discrete forms of the coupled scheme.

Every form comes in two flavours:

* ``form_*`` evaluates the (multi)linear form at given coefficient vectors
  and returns a float;
* ``assemble_*`` returns the vector (or matrix) obtained by letting the
  test argument run over a basis, so that ``form_x(..., vbar) ==
  assemble_x(...) @ vbar``.

Coefficient conventions: velocities are full vectors over the vector P2
space (component-major, Dirichlet dofs included), ``phi`` and other P0
fields are per-element arrays, ``mu`` and ``Pi_1^h phi`` are vertex arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .fespace import Discretization, Field
from .mesh import validate_hypothesis


# ----------------------------------------------------------------------
# parameters
@dataclass(frozen=True)
class Params:
    eps: float = 0.01
    lam: float = 0.01
    rho1: float = 1.0
    rho2: float = 100.0
    eta: float = 1.0
    dt: float = 1e-3
    delta: float = 1e-6
    xi: float = 1e-10
    gravity: tuple[float, float] = field(default=(0.0, 0.0))

    def __post_init__(self):
        for name in ("eps", "lam", "eta", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.delta < 0 or self.xi < 0:
            raise ValueError("delta and xi must be non-negative")
        # matched densities are allowed: they reduce the scheme to plain CH-NS
        if not (0 < self.rho1 <= self.rho2):
            raise ValueError(f"need 0 < rho1 <= rho2, got rho1={self.rho1}, rho2={self.rho2}")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        if len(self.gravity) != 2:
            raise ValueError("gravity must have two components")

    @property
    def rho_avg(self) -> float:
        return 0.5 * (self.rho1 + self.rho2)

    @property
    def rho_dif(self) -> float:
        return 0.5 * (self.rho2 - self.rho1)

    @property
    def has_gravity(self) -> bool:
        return any(g != 0.0 for g in self.gravity)


# ----------------------------------------------------------------------
# scalar functions
def pos(z):
    return np.maximum(z, 0.0)


def neg(z):
    return -np.minimum(z, 0.0)


def heaviside(z):
    """Derivative of ``pos``; zero at the kink."""
    return (np.asarray(z) > 0).astype(float)


def mobility(z):
    return pos(1.0 - np.square(z))


def mobility_up(z):
    """Nondecreasing part of the mobility."""
    z = np.asarray(z, dtype=float)
    return np.where(z <= 0, mobility(z), 1.0)


def mobility_down(z):
    """Nonincreasing part of the mobility."""
    z = np.asarray(z, dtype=float)
    return np.where(z <= 0, 0.0, mobility(z) - 1.0)


def d_mobility(z):
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1.0, -2.0 * z, 0.0)


def d_mobility_up(z):
    z = np.asarray(z, dtype=float)
    return np.where(z <= 0, d_mobility(z), 0.0)


def d_mobility_down(z):
    z = np.asarray(z, dtype=float)
    return np.where(z <= 0, 0.0, d_mobility(z))


def potential_F(phi):
    """Ginzburg-Landau double well ``(phi^2 - 1)^2 / 4``."""
    return 0.25 * (np.square(phi) - 1.0) ** 2


def potential_f(phi1, phi0):
    """Convex-splitting derivative: implicit ``2 phi1`` plus explicit ``phi0^3 - 3 phi0``."""
    return 2.0 * phi1 + phi0**3 - 3.0 * phi0


def density(params: Params, phi):
    if isinstance(phi, Field):
        return Field(phi.space, params.rho_avg + params.rho_dif * phi.coeffs)
    return params.rho_avg + params.rho_dif * np.asarray(phi)


def _c(v):
    return v.coeffs if isinstance(v, Field) else np.asarray(v, dtype=float)


# ----------------------------------------------------------------------
# scatter helpers
def velocity_vector(disc: Discretization, local: np.ndarray) -> np.ndarray:
    """Sum element contributions ``local[k, c, a]`` into a full velocity vector."""
    nds = disc.V.dof_count
    dm = disc.V.dof_map
    out = np.bincount(dm.ravel(), weights=local[:, 0].ravel(), minlength=nds)
    out1 = np.bincount(dm.ravel(), weights=local[:, 1].ravel(), minlength=nds)
    return np.concatenate([out, out1])


def velocity_dofs_local(disc: Discretization) -> np.ndarray:
    """Global vector dofs per element in local order (comp 0 block, comp 1 block)."""
    dm = disc.V.dof_map
    return np.hstack([dm, dm + disc.V.dof_count])


def scatter_matrix(rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape) -> sp.csr_matrix:
    """Assemble element matrices ``local[k, i, j]`` with dof lists ``rows[k]``, ``cols[k]``."""
    nk, ni, nj = local.shape
    R = np.broadcast_to(rows[:, :, None], (nk, ni, nj)).ravel()
    C = np.broadcast_to(cols[:, None, :], (nk, ni, nj)).ravel()
    return sp.csr_matrix((local.ravel(), (R, C)), shape=shape)


def block_diag_local(scalar: np.ndarray) -> np.ndarray:
    """Replicate a scalar element matrix on both velocity components."""
    nk, n, _ = scalar.shape
    out = np.zeros((nk, 2 * n, 2 * n))
    out[:, :n, :n] = scalar
    out[:, n:, n:] = scalar
    return out


def edge_velocity_vector(disc: Discretization, g: np.ndarray) -> np.ndarray:
    """Vector of ``sum_e int_e g (vbar . n_e)`` over velocity basis functions.

    ``g`` holds values at edge quadrature points, shape (nie, 3).
    """
    nds = disc.V.dof_count
    tr = np.einsum("eq,qb->eb", disc.edge_w * g, disc.edge_trace)  # (nie, 3)
    n = disc.mesh.normals
    out = np.zeros(2 * nds)
    for c in range(2):
        out[c * nds : (c + 1) * nds] = np.bincount(
            disc.edge_vdofs.ravel(), weights=(tr * n[:, c : c + 1]).ravel(), minlength=nds
        )
    return out


def edge_velocity_dofs(disc: Discretization) -> np.ndarray:
    """Vector dofs of the edge traces, (nie, 6): comp 0 (A, B, mid), comp 1 (A, B, mid)."""
    return np.hstack([disc.edge_vdofs, disc.edge_vdofs + disc.V.dof_count])


def edge_normal_traces(disc: Discretization) -> np.ndarray:
    """``(phi_b e_c) . n_e`` at edge quadrature points, (nie, 3 quad, 6)."""
    n = disc.mesh.normals
    tr = disc.edge_trace[None, :, :]
    return np.concatenate([tr * n[:, None, 0:1], tr * n[:, None, 1:2]], axis=2)


def element_divergence_integrals(disc: Discretization) -> np.ndarray:
    """``int_K div(N_a e_c)``, shape (nel, 2, nloc)."""
    return np.einsum("kq,kqac->kca", disc.W, disc.dNv)


# ----------------------------------------------------------------------
# upwind transport a_upw
def a_upw_edge_flux(un: np.ndarray, w: np.ndarray, phi_K, phi_L) -> np.ndarray:
    """``int_e ((u.n)+ phi_K - (u.n)- phi_L)`` per edge."""
    return np.sum(w * (pos(un) * phi_K[:, None] - neg(un) * phi_L[:, None]), axis=1)


def assemble_a_upw(disc: Discretization, u, phi) -> np.ndarray:
    """``a_upw(u, phi, 1_K)`` for every element K."""
    mesh = disc.mesh
    phi = _c(phi)
    un = disc.velocity_edge_normal(_c(u))
    flux = a_upw_edge_flux(un, disc.edge_w, phi[mesh.K], phi[mesh.L])
    nel = mesh.n_elements
    return np.bincount(mesh.K, flux, nel) - np.bincount(mesh.L, flux, nel)


def form_a_upw(disc: Discretization, u, phi, phibar) -> float:
    return float(assemble_a_upw(disc, u, phi) @ _c(phibar))


def a_upw_centered_split(disc: Discretization, u, phi, phibar) -> tuple[float, float]:
    """The two pieces ``sum int (u.n)<phi>[phibar]`` and ``1/2 sum int |u.n| [phi][phibar]``."""
    mesh = disc.mesh
    phi, phibar = _c(phi), _c(phibar)
    un = disc.velocity_edge_normal(_c(u))
    avg = 0.5 * (phi[mesh.K] + phi[mesh.L])
    jphi = phi[mesh.K] - phi[mesh.L]
    jbar = phibar[mesh.K] - phibar[mesh.L]
    centered = np.sum(disc.edge_w * un * (avg * jbar)[:, None])
    upwind = 0.5 * np.sum(disc.edge_w * np.abs(un) * (jphi * jbar)[:, None])
    return float(centered), float(upwind)


# ----------------------------------------------------------------------
# upwind degenerate diffusion b_upw (two-point jump form)
def b_upw_edge_flux(jump_mu, phi_K, phi_L, length, D):
    """``|e|/D_e ((jmu)+ (Mup(phi_K)+Mdown(phi_L))+ - (jmu)- (Mup(phi_L)+Mdown(phi_K))+)``."""
    A = pos(mobility_up(phi_K) + mobility_down(phi_L))
    B = pos(mobility_up(phi_L) + mobility_down(phi_K))
    return length / D * (pos(jump_mu) * A - neg(jump_mu) * B)


def _require_hypothesis(disc: Discretization) -> None:
    if not disc.mesh.validated:
        validate_hypothesis(disc.mesh)


def assemble_b_upw(disc: Discretization, mu, phi) -> np.ndarray:
    """``b_upw(mu, phi, 1_K)`` for every element K (jumps of ``Pi_0 mu``)."""
    _require_hypothesis(disc)
    mesh = disc.mesh
    phi = _c(phi)
    mu0 = disc.mean_P0 @ _c(mu)
    flux = b_upw_edge_flux(mu0[mesh.K] - mu0[mesh.L], phi[mesh.K], phi[mesh.L], mesh.lengths, mesh.D_e)
    nel = mesh.n_elements
    return np.bincount(mesh.K, flux, nel) - np.bincount(mesh.L, flux, nel)


def form_b_upw(disc: Discretization, mu, phi, phibar) -> float:
    return float(assemble_b_upw(disc, mu, phi) @ _c(phibar))


# ----------------------------------------------------------------------
# centered phase-field force c_h
def assemble_c_h(disc: Discretization, phi, mu0) -> np.ndarray:
    """``c_h(phi, mu0, vbar)`` over velocity basis functions (phi, mu0 in P0)."""
    mesh = disc.mesh
    phi, mu0 = _c(phi), _c(mu0)
    div = element_divergence_integrals(disc)
    vol = velocity_vector(disc, -(phi * mu0)[:, None, None] * div)
    avg = 0.5 * (phi[mesh.K] + phi[mesh.L])
    jmu = mu0[mesh.K] - mu0[mesh.L]
    g = np.broadcast_to((-avg * jmu)[:, None], disc.edge_w.shape)
    return vol + edge_velocity_vector(disc, g)


def form_c_h(disc: Discretization, phi, mu0, ubar) -> float:
    return float(assemble_c_h(disc, phi, mu0) @ _c(ubar))


# ----------------------------------------------------------------------
# upwind-control stabilisation s_h
def sign_regularized(un, delta: float):
    if delta == 0.0:
        return np.sign(un)
    return un / (np.abs(un) + delta)


def assemble_s_h(disc: Discretization, u, phi, mu0, delta: float) -> np.ndarray:
    """``-1/2 sum_e int_e (vbar.n) S(u.n) [mu0][phi]`` over velocity basis functions.

    ``S`` is ``sign`` (with ``sign(0) = 0``) for ``delta == 0`` and
    ``s / (|s| + delta)`` otherwise.
    """
    mesh = disc.mesh
    phi, mu0 = _c(phi), _c(mu0)
    un = disc.velocity_edge_normal(_c(u))
    jj = (phi[mesh.K] - phi[mesh.L]) * (mu0[mesh.K] - mu0[mesh.L])
    return edge_velocity_vector(disc, -0.5 * sign_regularized(un, delta) * jj[:, None])


def form_s_h(disc: Discretization, u, phi, mu0, ubar, delta: float = 0.0) -> float:
    return float(assemble_s_h(disc, u, phi, mu0, delta) @ _c(ubar))


def s_h_delta_dissipation(disc: Discretization, u, phi, mu0, delta: float) -> float:
    """``delta/2 sum_e int_e |u.n| / (|u.n| + delta) [mu0][phi]``."""
    if delta == 0.0:
        return 0.0
    mesh = disc.mesh
    phi, mu0 = _c(phi), _c(mu0)
    un = disc.velocity_edge_normal(_c(u))
    jj = (phi[mesh.K] - phi[mesh.L]) * (mu0[mesh.K] - mu0[mesh.L])
    return float(0.5 * delta * np.sum(disc.edge_w * np.abs(un) / (np.abs(un) + delta) * jj[:, None]))


# ----------------------------------------------------------------------
# density-transport residual t_h and the extra convective flux J_h
def form_J_h(disc: Discretization, phi0h, grad_proj: np.ndarray, params: Params) -> np.ndarray:
    """``rho_dif M(phi0h) Pi_1(grad mu)`` at element quadrature points, (nel, nq, 2)."""
    m = mobility(disc.p1_at_quad(_c(phi0h)))
    T = disc.mesh.elements
    gx = grad_proj[T, 0] @ disc.N1.T
    gy = grad_proj[T, 1] @ disc.N1.T
    return params.rho_dif * m[..., None] * np.stack([gx, gy], axis=-1)


def transport_field(disc: Discretization, u0, phi0h, grad_proj, params: Params) -> np.ndarray:
    """``rho(phi0h) u0 - J_h`` at quadrature points, (nel, nq, 2)."""
    u0q, _ = disc.velocity_at_quad(_c(u0))
    rho0 = density(params, disc.p1_at_quad(_c(phi0h)))
    return rho0[..., None] * u0q - form_J_h(disc, phi0h, grad_proj, params)


def assemble_t_h(disc: Discretization, u1, u0, phi1h, phi0h, grad_proj, params: Params) -> np.ndarray:
    """``t_h(u1, u0, phi1h, phi0h, mu; vbar)`` over velocity basis functions.

    ``grad_proj`` is ``Pi_1(grad mu)`` as a (nv, 2) array.
    """
    w = transport_field(disc, u0, phi0h, grad_proj, params)
    drho = (density(params, disc.p1_at_quad(_c(phi1h))) - density(params, disc.p1_at_quad(_c(phi0h)))) / params.dt
    uq, gu = disc.velocity_at_quad(_c(u1))
    W = disc.W
    # 1/2 (drho, u1_c N_a) - 1/2 (w, grad(u1_c) N_a + u1_c grad N_a)
    wgu = np.einsum("kqj,kqcj->kqc", w, gu)
    loc = 0.5 * np.einsum("kq,kqc,qa->kca", W, drho[..., None] * uq - wgu, disc.Nv)
    loc -= 0.5 * np.einsum("kq,kqc,kqj,kqaj->kca", W, uq, w, disc.dNv)
    return velocity_vector(disc, loc)


def form_t_h(disc: Discretization, u1, u0, phi1h, phi0h, grad_proj, ubar, params: Params) -> float:
    return float(assemble_t_h(disc, u1, u0, phi1h, phi0h, grad_proj, params) @ _c(ubar))


# ----------------------------------------------------------------------
# Stokes-type forms
def viscous_local(disc: Discretization, eta) -> np.ndarray:
    """Element matrices of ``2 (eta D u, D v)``, local order (comp 0, comp 1)."""
    eta_q = np.broadcast_to(np.asarray(eta, dtype=float), disc.W.shape)
    Wq = disc.W * eta_q
    G = disc.dNv
    lap = np.einsum("kq,kqai,kqbi->kab", Wq, G, G)
    out = block_diag_local(lap)
    n = disc.nloc_v
    # cross term d_c N_b d_d N_a for row (a, c), column (b, d)
    for c in range(2):
        for d in range(2):
            out[:, c * n : (c + 1) * n, d * n : (d + 1) * n] += np.einsum(
                "kq,kqa,kqb->kab", Wq, G[..., d], G[..., c]
            )
    return out


def assemble_viscous(disc: Discretization, eta) -> sp.csr_matrix:
    dofs = velocity_dofs_local(disc)
    n = disc.V.size
    return scatter_matrix(dofs, dofs, viscous_local(disc, eta), (n, n))


def form_viscous(disc: Discretization, u, ubar, eta) -> float:
    return float(_c(ubar) @ (assemble_viscous(disc, eta) @ _c(u)))


def divergence_local(disc: Discretization) -> np.ndarray:
    """``int_K div(N_b e_d) q_i``, shape (nel, nloc_q, 2 nloc_v)."""
    loc = np.einsum("kq,qi,kqbd->kidb", disc.W, disc.Nq, disc.dNv)
    return loc.reshape(loc.shape[0], loc.shape[1], -1)


def assemble_divergence(disc: Discretization) -> sp.csr_matrix:
    """Matrix ``B`` with ``pbar @ B @ u == (div u, pbar)``."""
    return scatter_matrix(
        disc.Q.dof_map, velocity_dofs_local(disc), divergence_local(disc), (disc.Q.size, disc.V.size)
    )


def form_divergence(disc: Discretization, u, pbar) -> float:
    return float(_c(pbar) @ (assemble_divergence(disc) @ _c(u)))


def form_pressure(disc: Discretization, p, ubar) -> float:
    """``-(p, div ubar)``."""
    return -form_divergence(disc, ubar, p)


def assemble_pressure_mass(disc: Discretization) -> sp.csr_matrix:
    loc = np.einsum("kq,qi,qj->kij", disc.W, disc.Nq, disc.Nq)
    return scatter_matrix(disc.Q.dof_map, disc.Q.dof_map, loc, (disc.Q.size, disc.Q.size))


def assemble_gravity(disc: Discretization, phi1h, params: Params) -> np.ndarray:
    """``(rho(phi1h) g, vbar)`` over velocity basis functions."""
    rho = density(params, disc.p1_at_quad(_c(phi1h)))
    g = np.asarray(params.gravity)
    loc = np.einsum("kq,qa,c->kca", disc.W * rho, disc.Nv, g)
    return velocity_vector(disc, loc)


def form_gravity(disc: Discretization, phi1h, ubar, params: Params) -> float:
    return float(assemble_gravity(disc, phi1h, params) @ _c(ubar))


def convection_local(disc: Discretization, w: np.ndarray) -> np.ndarray:
    """Scalar element matrices of ``((w . grad) N_b, N_a)``."""
    return kernels.convection_local(disc.W, w, disc.Nv, disc.dNv)


def weighted_mass_local(disc: Discretization, weight: np.ndarray) -> np.ndarray:
    """Scalar element matrices of ``(weight N_b, N_a)``."""
    return np.einsum("kq,qa,qb->kab", disc.W * weight, disc.Nv, disc.Nv)


def form_convection(disc: Discretization, w: np.ndarray, u, ubar) -> float:
    """``((w . grad) u, ubar)`` with ``w`` given at quadrature points."""
    _, gu = disc.velocity_at_quad(_c(u))
    vb, _ = disc.velocity_at_quad(_c(ubar))
    return float(np.einsum("kq,kqj,kqcj,kqc->", disc.W, w, gu, vb))


# ----------------------------------------------------------------------
# Cahn-Hilliard potential equation pieces
def energy(disc: Discretization, u, phih, params: Params) -> tuple[float, float, float]:
    """Kinetic, interfacial and bulk parts of the energy at ``(u, phih)``."""
    uq, _ = disc.velocity_at_quad(_c(u))
    ph = _c(phih)
    pq = disc.p1_at_quad(ph)
    kin = 0.5 * np.sum(disc.W * density(params, pq) * np.sum(uq**2, axis=-1))
    grad = disc.p1_grad(ph)
    gr = 0.5 * params.lam * params.eps * np.sum(disc.area * np.sum(grad**2, axis=1))
    bulk = params.lam / params.eps * np.sum(disc.W * potential_F(pq))
    return float(kin), float(gr), float(bulk)


def convex_splitting_defect(disc: Discretization, phi1h, phi0h, dt: float) -> float:
    """``int f(phi1, phi0) dt(phi1) - dt F(phi1)``; nonnegative for phi0 in [-1, 1]."""
    p1 = disc.p1_at_quad(_c(phi1h))
    p0 = disc.p1_at_quad(_c(phi0h))
    integrand = potential_f(p1, p0) * (p1 - p0) / dt - (potential_F(p1) - potential_F(p0)) / dt
    return float(np.sum(disc.W * integrand))
