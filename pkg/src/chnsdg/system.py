"""Monolithic residual and Jacobian of one time step of the coupled scheme.

Unknowns are stacked as ``[u (free velocity dofs), p, phi, mu]``.  The
velocity carries homogeneous Dirichlet data, so boundary dofs are removed
from the unknown vector and reinserted as zeros when needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import forms, kernels
from .fespace import Discretization, project_grad_P1
from .forms import (
    Params,
    d_mobility_down,
    d_mobility_up,
    heaviside,
    mobility_down,
    mobility_up,
    neg,
    pos,
)


class BoundViolation(RuntimeError):
    def __init__(self, message: str, element: int | None = None):
        self.element = element
        super().__init__(message)


class MassDrift(RuntimeError):
    pass


TOL_BOUND = 1e-8
TOL_MASS = 1e-10


# ----------------------------------------------------------------------
@dataclass
class State:
    """One time level.  ``u`` is the full velocity vector (boundary dofs included)."""

    u: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    t: float = 0.0
    phih: np.ndarray | None = field(default=None, repr=False)
    grad_mu: np.ndarray | None = field(default=None, repr=False)

    def refresh(self, disc: Discretization) -> "State":
        """Recompute ``Pi_1^h phi`` and ``Pi_1(grad mu)``."""
        self.phih = disc.lumped_projector @ self.phi
        self.grad_mu = project_grad_P1(disc, self.mu)
        return self

    def copy(self) -> "State":
        return State(
            self.u.copy(),
            self.p.copy(),
            self.phi.copy(),
            self.mu.copy(),
            self.t,
            None if self.phih is None else self.phih.copy(),
            None if self.grad_mu is None else self.grad_mu.copy(),
        )


@dataclass(frozen=True)
class BlockLayout:
    n_u: int
    n_p: int
    n_phi: int
    n_mu: int

    @property
    def size(self) -> int:
        return self.n_u + self.n_p + self.n_phi + self.n_mu

    @property
    def offsets(self) -> tuple[int, int, int, int]:
        return (0, self.n_u, self.n_u + self.n_p, self.n_u + self.n_p + self.n_phi)

    @property
    def slices(self) -> dict[str, slice]:
        o = self.offsets
        return {
            "u": slice(o[0], o[1]),
            "p": slice(o[1], o[2]),
            "phi": slice(o[2], o[3]),
            "mu": slice(o[3], self.size),
        }

    def block_of(self, index: int) -> str:
        for name, s in self.slices.items():
            if s.start <= index < s.stop:
                return name
        raise IndexError(index)

    def split(self, x: np.ndarray):
        if x.shape != (self.size,):
            raise ValueError(f"expected vector of length {self.size}, got shape {x.shape}")
        s = self.slices
        return x[s["u"]], x[s["p"]], x[s["phi"]], x[s["mu"]]


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    mass_h: float
    phi_min: float
    phi_max: float
    phi_h_min: float
    phi_h_max: float
    E: float
    E_kin: float
    E_grad: float
    E_pot: float
    defect: float
    lemma34: float
    newton_iters: int
    xi_p_inf: float
    incompressibility: float = 0.0

    CSV_COLUMNS = (
        "t", "mass", "phi_min", "phi_max", "phi_h_min", "phi_h_max", "E", "E_kin",
        "E_grad", "E_pot", "defect", "lemma34", "newton_iters", "xi_p_inf",
    )

    def csv_row(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]


# ----------------------------------------------------------------------
class CoupledSystem:
    """Residual/Jacobian provider for a fixed mesh, spaces and parameters."""

    def __init__(self, disc: Discretization, params: Params):
        self.disc = disc
        self.params = params
        mesh = disc.mesh
        self.layout = BlockLayout(len(disc.velocity_free), disc.Q.size, mesh.n_elements, mesh.n_vertices)
        free = disc.velocity_free
        self.free = free
        B = forms.assemble_divergence(disc).tocsc()
        self.B_full = B
        self.B = B[:, free].tocsr()
        self.Mp = forms.assemble_pressure_mass(disc)
        self.viscous_full = forms.assemble_viscous(disc, params.eta)
        self.div_int = forms.element_divergence_integrals(disc)
        self.edge_NT = forms.edge_normal_traces(disc)
        self.edge_dofs = forms.edge_velocity_dofs(disc)
        self.vel_dofs = forms.velocity_dofs_local(disc)
        # Cahn-Hilliard linear part: d R_mu / d phi
        L = disc.lumped_projector
        self.L = L
        self.P = disc.mean_P0
        lin = params.lam * params.eps * disc.stiffness_P1 + 2.0 * params.lam / params.eps * disc.mass_P1
        self.J_mu_phi = (lin @ L).tocsr()
        self.J_mu_mu = -sp.diags(disc.lumped_mass)
        self.old: State | None = None

    # ------------------------------------------------------------------
    def set_old_state(self, old: State) -> None:
        """Cache everything that depends only on the previous time level."""
        disc, prm = self.disc, self.params
        if old.phih is None or old.grad_mu is None:
            old.refresh(disc)
        self.old = old
        self.phih_old_q = disc.p1_at_quad(old.phih)
        rho_old = forms.density(prm, self.phih_old_q)
        self.w = forms.transport_field(disc, old.u, old.phih, old.grad_mu, prm)
        scal = forms.weighted_mass_local(disc, rho_old / prm.dt)
        mass_old = forms.scatter_matrix(self.vel_dofs, self.vel_dofs, forms.block_diag_local(scal), (disc.V.size,) * 2)
        conv = forms.convection_local(disc, self.w)
        # -1/2 (w, grad N_b N_a + N_b grad N_a) from t_h; the second term is conv^T
        th2 = -0.5 * (conv + conv.transpose(0, 2, 1))
        lin = forms.scatter_matrix(self.vel_dofs, self.vel_dofs, forms.block_diag_local(conv + th2), (disc.V.size,) * 2)
        A = (mass_old + lin + self.viscous_full).tocsr()
        f = self.free
        self.A_lin = A[f][:, f].tocsr()
        self.rhs_u_old = (mass_old @ old.u)[f]
        # explicit part of the potential equation
        p0 = self.phih_old_q
        expl = np.einsum("kq,kq,qa->ka", disc.W, p0**3 - 3.0 * p0, disc.N1)
        self.Q_old = np.bincount(disc.mesh.elements.ravel(), expl.ravel(), disc.mesh.n_vertices)

    # ------------------------------------------------------------------
    def pack(self, state: State) -> np.ndarray:
        return np.concatenate([state.u[self.free], state.p, state.phi, state.mu])

    def unpack(self, x: np.ndarray, t: float = 0.0) -> State:
        u, p, phi, mu = self.layout.split(x)
        return State(self.disc.velocity_full(u), p.copy(), phi.copy(), mu.copy(), t)

    def initial_guess(self) -> np.ndarray:
        return self.pack(self.old)

    # ------------------------------------------------------------------
    def _th_phi_local(self, uq):
        """``1/2 rho_dif/dt (u_c N_a, psi_i)`` element blocks (nel, 2 nloc, 3)."""
        disc, prm = self.disc, self.params
        loc = 0.5 * prm.rho_dif / prm.dt * kernels.weighted_product_local(disc.W[..., None] * uq, disc.Nv, disc.N1)
        return loc.reshape(loc.shape[0], -1, 3)

    def residual(self, x: np.ndarray) -> np.ndarray:
        disc, prm = self.disc, self.params
        old = self.old
        u_free, p, phi, mu = self.layout.split(x)
        u = disc.velocity_full(u_free)
        phih = self.L @ phi
        mu0 = self.P @ mu

        # momentum
        ru = self.A_lin @ u_free - self.rhs_u_old - self.B.T @ p
        extra = forms.assemble_c_h(disc, phi, mu0)
        extra += forms.assemble_s_h(disc, u, phi, mu0, prm.delta)
        uq, _ = disc.velocity_at_quad(u)
        dphih = disc.p1_at_quad(phih) - self.phih_old_q
        loc = 0.5 * prm.rho_dif / prm.dt * np.einsum("kq,kqc,qa->kca", disc.W * dphih, uq, disc.Nv)
        extra += forms.velocity_vector(disc, loc)
        if prm.has_gravity:
            extra += forms.assemble_gravity(disc, phih, prm)
        ru += extra[self.free]

        # continuity with pressure penalty
        rp = self.B @ u_free + prm.xi * (self.Mp @ p)

        # phase field
        rphi = disc.area * (phi - old.phi) / prm.dt
        rphi += forms.assemble_a_upw(disc, u, phi)
        rphi += forms.assemble_b_upw(disc, mu, phi)

        # chemical potential
        rmu = (
            prm.lam * prm.eps * (disc.stiffness_P1 @ phih)
            + prm.lam / prm.eps * (2.0 * (disc.mass_P1 @ phih) + self.Q_old)
            - disc.lumped_mass * mu
        )
        return np.concatenate([ru, rp, rphi, rmu])

    # ------------------------------------------------------------------
    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        disc, prm, mesh = self.disc, self.params, self.disc.mesh
        lay = self.layout
        u_free, p, phi, mu = lay.split(x)
        u = disc.velocity_full(u_free)
        phih = self.L @ phi
        mu0 = self.P @ mu
        nV = disc.V.size
        nel = mesh.n_elements
        K, Lr = mesh.K, mesh.L
        f = self.free
        fidx = disc.velocity_index

        uq, _ = disc.velocity_at_quad(u)
        dphih = disc.p1_at_quad(phih) - self.phih_old_q
        T1 = forms.weighted_mass_local(disc, 0.5 * prm.rho_dif / prm.dt * dphih)
        Juu = forms.scatter_matrix(self.vel_dofs, self.vel_dofs, forms.block_diag_local(T1), (nV, nV))

        # edge quantities
        un = disc.velocity_edge_normal(u)
        w = disc.edge_w
        jphi = phi[K] - phi[Lr]
        jmu = mu0[K] - mu0[Lr]
        avg = 0.5 * (phi[K] + phi[Lr])
        NT = self.edge_NT  # (nie, q, 6)
        ed = self.edge_dofs
        S = forms.sign_regularized(un, prm.delta)
        if prm.delta > 0:
            dS = prm.delta / (np.abs(un) + prm.delta) ** 2
        else:
            dS = np.zeros_like(un)
        # s_h wrt u
        loc = np.einsum("eq,eqi,eqj->eij", w * (-0.5 * dS * (jphi * jmu)[:, None]), NT, NT)
        Juu = Juu + forms.scatter_matrix(ed, ed, loc, (nV, nV))
        Juu = Juu.tocsr()[f][:, f]
        Juu = (self.A_lin + Juu).tocsr()

        # momentum wrt phi (P0 columns) and mu0 (P0 columns)
        ENT = np.einsum("eq,eqi->ei", w, NT)  # int_e vbar.n
        ESN = np.einsum("eq,eqi->ei", w * S, NT)  # int_e S(u.n) vbar.n
        rows, cols, vals = [], [], []
        # c_h volume
        vd = self.vel_dofs
        dv = self.div_int.reshape(nel, -1)  # (nel, 2 nloc) in local order
        ek = np.broadcast_to(np.arange(nel)[:, None], vd.shape)
        rows.append(vd.ravel()); cols.append(ek.ravel()); vals.append((-mu0[:, None] * dv).ravel())
        # c_h edge: -<phi>[mu0] -> d/dphi_K = d/dphi_L = -0.5 [mu0]
        # s_h: -1/2 S [phi][mu0] -> d/dphi_K = -1/2 S [mu0], d/dphi_L = +1/2 S [mu0]
        cK = -0.5 * jmu[:, None] * ENT - 0.5 * jmu[:, None] * ESN
        cL = -0.5 * jmu[:, None] * ENT + 0.5 * jmu[:, None] * ESN
        for col, c in ((K, cK), (Lr, cL)):
            rows.append(ed.ravel()); cols.append(np.repeat(col, 6)); vals.append(c.ravel())
        Jup0 = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nV, nel))

        rows, cols, vals = [], [], []
        rows.append(vd.ravel()); cols.append(ek.ravel()); vals.append((-phi[:, None] * dv).ravel())
        mK = -avg[:, None] * ENT - 0.5 * jphi[:, None] * ESN
        for col, c in ((K, mK), (Lr, -mK)):
            rows.append(ed.ravel()); cols.append(np.repeat(col, 6)); vals.append(c.ravel())
        Jum0 = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nV, nel))

        # t_h and gravity wrt phih (P1 columns)
        loc = self._th_phi_local(uq)
        if prm.has_gravity:
            g = np.asarray(prm.gravity)
            gl = prm.rho_dif * np.einsum("kq,qa,c,qi->kcai", disc.W, disc.Nv, g, disc.N1)
            loc = loc + gl.reshape(nel, -1, 3)
        Juh = forms.scatter_matrix(vd, mesh.elements, loc, (nV, mesh.n_vertices))
        Juphi = (Jup0 + Juh @ self.L).tocsr()[f]
        Jumu = (Jum0 @ self.P).tocsr()[f]

        # phase-field rows
        # a_upw
        dK = np.sum(w * pos(un), axis=1)
        dL = -np.sum(w * neg(un), axis=1)
        r = np.concatenate([K, Lr, K, Lr, np.arange(nel)])
        c = np.concatenate([K, K, Lr, Lr, np.arange(nel)])
        v = [dK, -dK, dL, -dL, disc.area / prm.dt]
        # b_upw
        ld = mesh.lengths / mesh.D_e
        A = mobility_up(phi[K]) + mobility_down(phi[Lr])
        Bm = mobility_up(phi[Lr]) + mobility_down(phi[K])
        bK = ld * (pos(jmu) * heaviside(A) * d_mobility_up(phi[K]) - neg(jmu) * heaviside(Bm) * d_mobility_down(phi[K]))
        bL = ld * (pos(jmu) * heaviside(A) * d_mobility_down(phi[Lr]) - neg(jmu) * heaviside(Bm) * d_mobility_up(phi[Lr]))
        r = np.concatenate([r, K, Lr, K, Lr])
        c = np.concatenate([c, K, K, Lr, Lr])
        v = np.concatenate(v + [bK, -bK, bL, -bL])
        Jpp = sp.csr_matrix((v, (r, c)), shape=(nel, nel))
        # b_upw wrt mu0
        bj = ld * (heaviside(jmu) * pos(A) + heaviside(-jmu) * pos(Bm))
        r = np.concatenate([K, K, Lr, Lr])
        c = np.concatenate([K, Lr, K, Lr])
        v = np.concatenate([bj, -bj, -bj, bj])
        Jphimu = (sp.csr_matrix((v, (r, c)), shape=(nel, nel)) @ self.P).tocsr()
        # a_upw wrt u
        coef = w * (heaviside(un) * phi[K][:, None] + heaviside(-un) * phi[Lr][:, None])
        au = np.einsum("eq,eqi->ei", coef, NT)
        r = np.concatenate([np.repeat(K, 6), np.repeat(Lr, 6)])
        c = np.concatenate([ed.ravel(), ed.ravel()])
        v = np.concatenate([au.ravel(), -au.ravel()])
        cf = fidx[c]
        keep = cf >= 0
        Jphiu = sp.csr_matrix((v[keep], (r[keep], cf[keep])), shape=(nel, lay.n_u))

        Jpu = self.B
        Jpp_ = prm.xi * self.Mp
        return sp.bmat(
            [
                [Juu, -self.B.T, Juphi, Jumu],
                [Jpu, Jpp_, None, None],
                [Jphiu, None, Jpp, Jphimu],
                [None, None, self.J_mu_phi, self.J_mu_mu],
            ],
            format="csr",
        )

    # ------------------------------------------------------------------
    def initial_mu(self, phi: np.ndarray) -> np.ndarray:
        """Chemical potential from the potential equation with ``phi`` in both slots."""
        disc, prm = self.disc, self.params
        phih = self.L @ phi
        q = disc.p1_at_quad(phih)
        fval = np.einsum("kq,kq,qa->ka", disc.W, forms.potential_f(q, q), disc.N1)
        load = np.bincount(disc.mesh.elements.ravel(), fval.ravel(), disc.mesh.n_vertices)
        return (prm.lam * prm.eps * (disc.stiffness_P1 @ phih) + prm.lam / prm.eps * load) / disc.lumped_mass

    # ------------------------------------------------------------------
    def energy(self, state: State) -> tuple[float, float, float]:
        if state.phih is None:
            state.phih = self.L @ state.phi
        return forms.energy(self.disc, state.u, state.phih, self.params)

    def local_incompressibility(self, state: State) -> np.ndarray:
        """``sum_e int_e (u.n)[1_K]`` for every element K."""
        disc, mesh = self.disc, self.disc.mesh
        un = disc.velocity_edge_normal(state.u)
        flux = np.sum(disc.edge_w * un, axis=1)
        nel = mesh.n_elements
        return np.bincount(mesh.K, flux, nel) - np.bincount(mesh.L, flux, nel)

    def post_step_checks(
        self,
        new: State,
        old: State,
        newton_iters: int = 0,
        check: bool = True,
        tol_bound: float = TOL_BOUND,
    ) -> DiagnosticsRecord:
        """Diagnostics of a converged step; raises on bound or mass violations."""
        disc, prm = self.disc, self.params
        if new.phih is None:
            new.phih = self.L @ new.phi
        if old.phih is None:
            old.phih = self.L @ old.phi
        mass = float(disc.area @ new.phi)
        mass_old = float(disc.area @ old.phi)
        mass_h = float(disc.lumped_mass @ new.phih)
        ek, eg, ep = self.energy(new)
        E = ek + eg + ep
        E_old = sum(self.energy(old))
        mu0 = self.P @ new.mu
        visc = forms.form_viscous(disc, new.u, new.u, prm.eta)
        bup = forms.form_b_upw(disc, new.mu, new.phi, mu0)
        reg = forms.s_h_delta_dissipation(disc, new.u, new.phi, mu0, prm.delta)
        defect = (E - E_old) / prm.dt + visc + bup + reg
        cancel = (
            forms.form_a_upw(disc, new.u, new.phi, mu0)
            + forms.form_c_h(disc, new.phi, mu0, new.u)
            + forms.form_s_h(disc, new.u, new.phi, mu0, new.u, delta=0.0)
        )
        incompress = float(np.max(np.abs(self.local_incompressibility(new))))
        rec = DiagnosticsRecord(
            t=new.t,
            mass=mass,
            mass_h=mass_h,
            phi_min=float(new.phi.min()),
            phi_max=float(new.phi.max()),
            phi_h_min=float(new.phih.min()),
            phi_h_max=float(new.phih.max()),
            E=E,
            E_kin=ek,
            E_grad=eg,
            E_pot=ep,
            defect=float(defect),
            lemma34=abs(float(cancel)),
            newton_iters=int(newton_iters),
            xi_p_inf=float(prm.xi * np.max(np.abs(new.p))) if new.p.size else 0.0,
            incompressibility=incompress,
        )
        if check:
            lo = min(rec.phi_min, rec.phi_h_min)
            hi = max(rec.phi_max, rec.phi_h_max)
            if lo < -1.0 - tol_bound or hi > 1.0 + tol_bound:
                k = int(np.argmin(new.phi)) if lo < -1.0 - tol_bound else int(np.argmax(new.phi))
                raise BoundViolation(
                    f"t={new.t:g}: phase field leaves [-1, 1] (min {lo:.3e}, max {hi:.3e}); "
                    f"extreme element {k}",
                    element=k,
                )
            if abs(mass - mass_old) > TOL_MASS * disc.mesh.area:
                raise MassDrift(f"t={new.t:g}: mass drift {mass - mass_old:.3e}")
        if not all(math.isfinite(v) for v in rec.csv_row()):
            raise RuntimeError(f"t={new.t:g}: non-finite diagnostics {rec}")
        return rec
