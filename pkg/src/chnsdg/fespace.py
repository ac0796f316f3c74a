"""Discrete spaces, dof maps, projections and the mass-lumped inner product.

Spaces supported on a :class:`~chnsdg.mesh.StructuredTriMesh`:

``P0_disc``       one value per element
``P1_cont``       vertex values
``P1_disc``       three vertex values per element
``P2_cont``       vertices, then edge midpoints
``P2_bubble``     ``P2_cont`` plus one cubic bubble per element

Velocity spaces are two copies of a scalar P2 space, component-major.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .mesh import EDGE_QUAD_POINTS, EDGE_QUAD_WEIGHTS, StructuredTriMesh
from .quadrature import composite_rule, triangle_rule

KINDS = ("P0_disc", "P1_cont", "P1_disc", "P2_cont", "P2_bubble")

# Integrands of the momentum equation reach degree 9 (rho * u0 . grad(u . v)).
DEFAULT_QUAD_DEGREE = 9


# ----------------------------------------------------------------------
# reference basis functions
def p1_reference(points: np.ndarray):
    x, y = points[:, 0], points[:, 1]
    vals = np.stack([1.0 - x - y, x, y], axis=1)
    grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return vals, np.broadcast_to(grads, (len(points), 3, 2)).copy()


def p2_reference(points: np.ndarray, bubble: bool):
    """P2 Lagrange basis (vertices, then edges opposite vertex 0,1,2) [+ bubble]."""
    x, y = points[:, 0], points[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nloc = 7 if bubble else 6
    vals = np.empty((len(points), nloc))
    grads = np.empty((len(points), nloc, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        grads[:, i] = (4 * lam[:, i] - 1)[:, None] * dlam[i]
    for j in range(3):
        a, b = (j + 1) % 3, (j + 2) % 3
        vals[:, 3 + j] = 4 * lam[:, a] * lam[:, b]
        grads[:, 3 + j] = 4 * (lam[:, b][:, None] * dlam[a] + lam[:, a][:, None] * dlam[b])
    if bubble:
        vals[:, 6] = 27 * lam[:, 0] * lam[:, 1] * lam[:, 2]
        grads[:, 6] = 27 * (
            (lam[:, 1] * lam[:, 2])[:, None] * dlam[0]
            + (lam[:, 0] * lam[:, 2])[:, None] * dlam[1]
            + (lam[:, 0] * lam[:, 1])[:, None] * dlam[2]
        )
    return vals, grads


def p2_edge_trace(t: np.ndarray) -> np.ndarray:
    """Traces of the P2 basis on an edge A->B: columns (A, B, midpoint)."""
    return np.stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)], axis=1)


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Space:
    kind: str
    dof_map: np.ndarray  # (nel, nloc) scalar dofs
    dof_count: int
    dim: int = 1  # vector dimension

    @property
    def size(self) -> int:
        return self.dim * self.dof_count


@dataclass
class Field:
    space: Space
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.size,):
            raise ValueError(
                f"{self.space.kind} field needs {self.space.size} coefficients, "
                f"got shape {self.coeffs.shape}"
            )


def make_space(mesh: StructuredTriMesh, kind: str, dim: int = 1) -> Space:
    nel, nv, ne = mesh.n_elements, mesh.n_vertices, mesh.n_edges
    if kind == "P0_disc":
        return Space(kind, np.arange(nel)[:, None], nel, dim)
    if kind == "P1_cont":
        return Space(kind, mesh.elements.copy(), nv, dim)
    if kind == "P1_disc":
        return Space(kind, np.arange(3 * nel).reshape(nel, 3), 3 * nel, dim)
    if kind in ("P2_cont", "P2_bubble"):
        dm = np.hstack([mesh.elements, nv + mesh.element_edges])
        n = nv + ne
        if kind == "P2_bubble":
            dm = np.hstack([dm, (n + np.arange(nel))[:, None]])
            n += nel
        return Space(kind, dm, n, dim)
    raise ValueError(f"unknown space kind {kind!r}; expected one of {KINDS}")


class Discretization:
    """Mesh, spaces and precomputed quadrature data shared by all forms.

    Parameters
    ----------
    mesh : StructuredTriMesh
    velocity : {"P2_bubble", "P2_cont"}
    pressure : {"P1_disc", "P0_disc"}
    quad_degree : int
        Exactness degree of the element quadrature.
    """

    def __init__(
        self,
        mesh: StructuredTriMesh,
        velocity: str = "P2_bubble",
        pressure: str = "P1_disc",
        quad_degree: int = DEFAULT_QUAD_DEGREE,
    ):
        if velocity not in ("P2_bubble", "P2_cont"):
            raise ValueError(f"unsupported velocity space {velocity!r}")
        if pressure not in ("P1_disc", "P0_disc"):
            raise ValueError(f"unsupported pressure space {pressure!r}")
        self.mesh = mesh
        self.V = make_space(mesh, velocity, dim=2)
        self.Q = make_space(mesh, pressure)
        self.P0 = make_space(mesh, "P0_disc")
        self.P1 = make_space(mesh, "P1_cont")
        self.quad_degree = quad_degree

        nel = mesh.n_elements
        V, T = mesh.vertices, mesh.elements
        x0 = V[T[:, 0]]
        J = np.stack([V[T[:, 1]] - x0, V[T[:, 2]] - x0], axis=2)  # (nel, 2, 2), columns
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / det
        Jinv[:, 1, 1] = J[:, 0, 0] / det
        Jinv[:, 0, 1] = -J[:, 0, 1] / det
        Jinv[:, 1, 0] = -J[:, 1, 0] / det
        self.area = mesh.areas
        self.jac = J
        self.jac_inv = Jinv

        pts, wts = triangle_rule(quad_degree)
        self.ref_points = pts
        self.nq = len(wts)
        self.W = np.abs(det)[:, None] * wts[None, :]  # (nel, nq)
        self.qpoints = x0[:, None, :] + np.einsum("kij,qj->kqi", J, pts)

        self.N1, g1 = p1_reference(pts)
        self.dN1 = np.einsum("kji,aj->kai", Jinv, g1[0])  # (nel, 3, 2)
        bubble = velocity == "P2_bubble"
        self.Nv, gv = p2_reference(pts, bubble)
        self.dNv = np.einsum("kji,qaj->kqai", Jinv, gv)  # (nel, nq, nloc, 2)
        self.nloc_v = self.Nv.shape[1]
        self.Nq = self.N1 if pressure == "P1_disc" else np.ones((self.nq, 1))
        self.nloc_q = self.Nq.shape[1]

        # interior-edge traces
        ie = mesh.interior_edge_ids
        ev = mesh.edge_vertices[ie]
        nvert = mesh.n_vertices
        self.edge_vdofs = np.stack([ev[:, 0], ev[:, 1], nvert + ie], axis=1)
        self.edge_trace = p2_edge_trace(EDGE_QUAD_POINTS)  # (3 quad, 3 basis)
        self.edge_w = mesh.lengths[:, None] * EDGE_QUAD_WEIGHTS[None, :]  # (nie, 3)

        # Dirichlet velocity dofs: boundary vertices and boundary edge midpoints
        nds = self.V.dof_count
        bnd_scalar = np.concatenate([mesh.boundary_vertices, nvert + mesh.boundary_edge_ids])
        bnd = np.concatenate([bnd_scalar, nds + bnd_scalar])
        free = np.ones(2 * nds, dtype=bool)
        free[bnd] = False
        self.velocity_free = np.nonzero(free)[0]
        self.velocity_fixed = np.sort(bnd)
        self.velocity_index = np.full(2 * nds, -1, dtype=np.int64)
        self.velocity_index[self.velocity_free] = np.arange(len(self.velocity_free))

        # P1 masses
        self.lumped_mass = lumped_mass(mesh)
        rows = np.repeat(T, 3, axis=1).ravel()
        cols = np.tile(T, (1, 3)).ravel()
        loc = (np.ones((3, 3)) + np.eye(3)) / 12.0
        vals = (self.area[:, None, None] * loc[None]).ravel()
        self.mass_P1 = sp.csc_matrix((vals, (rows, cols)), shape=(nvert, nvert))
        self._mass_P1_lu = None

        # phi (P0) -> Pi_1^h phi (P1): entries |K| / (3 m_i)
        r = T.ravel()
        c = np.repeat(np.arange(nel), 3)
        v = np.repeat(self.area / 3.0, 3) / self.lumped_mass[r]
        self.lumped_projector = sp.csr_matrix((v, (r, c)), shape=(nvert, nel))
        # mu (P1) -> Pi_0 mu (P0): element mean of the vertex values
        self.mean_P0 = sp.csr_matrix((np.full(3 * nel, 1.0 / 3.0), (c, r)), shape=(nel, nvert))

        # P1 stiffness
        Kloc = np.einsum("kai,kbi->kab", self.dN1, self.dN1) * self.area[:, None, None]
        self.stiffness_P1 = sp.csr_matrix((Kloc.ravel(), (rows, cols)), shape=(nvert, nvert))

    # ------------------------------------------------------------------
    @property
    def mesh_h(self) -> float:
        return self.mesh.h

    def mass_P1_solve(self, b: np.ndarray) -> np.ndarray:
        if self._mass_P1_lu is None:
            self._mass_P1_lu = splu(self.mass_P1)
        return self._mass_P1_lu.solve(b)

    def velocity_full(self, u_free: np.ndarray) -> np.ndarray:
        full = np.zeros(self.V.size)
        full[self.velocity_free] = u_free
        return full

    # evaluation helpers ------------------------------------------------
    def p1_at_quad(self, v: np.ndarray) -> np.ndarray:
        """Values of a P1_cont field at element quadrature points (nel, nq)."""
        return v[self.mesh.elements] @ self.N1.T

    def p1_grad(self, v: np.ndarray) -> np.ndarray:
        """Elementwise-constant gradient of a P1_cont field (nel, 2)."""
        return np.einsum("ka,kai->ki", v[self.mesh.elements], self.dN1)

    def velocity_local(self, u_full: np.ndarray) -> np.ndarray:
        """Local velocity coefficients (nel, 2, nloc)."""
        nds = self.V.dof_count
        dm = self.V.dof_map
        return np.stack([u_full[dm], u_full[nds + dm]], axis=1)

    def velocity_at_quad(self, u_full: np.ndarray):
        """Velocity values (nel, nq, 2) and gradients (nel, nq, 2, 2), grad[..., c, j] = d_j u_c."""
        U = self.velocity_local(u_full)
        return kernels.velocity_values(U, self.Nv), kernels.velocity_gradients(U, self.dNv)

    def velocity_edge_normal(self, u_full: np.ndarray) -> np.ndarray:
        """``u . n_e`` at edge quadrature points (nie, 3)."""
        nds = self.V.dof_count
        ux = u_full[self.edge_vdofs] @ self.edge_trace.T
        uy = u_full[nds + self.edge_vdofs] @ self.edge_trace.T
        n = self.mesh.normals
        return ux * n[:, 0:1] + uy * n[:, 1:2]

    def pressure_at_quad(self, p: np.ndarray) -> np.ndarray:
        return p[self.Q.dof_map] @ self.Nq.T

    # evaluation at arbitrary points -------------------------------------
    def locate(self, points: np.ndarray):
        """Containing element and reference coordinates of each point (n, 2)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        elem = self.mesh.locate(points)
        x0 = self.mesh.vertices[self.mesh.elements[elem, 0]]
        ref = np.einsum("nij,nj->ni", self.jac_inv[elem], points - x0)
        return elem, ref

    def eval_p1(self, v: np.ndarray, points: np.ndarray):
        """Value and gradient of a P1_cont field at points."""
        elem, ref = self.locate(points)
        lam, _ = p1_reference(ref)
        vals = np.sum(v[self.mesh.elements[elem]] * lam, axis=1)
        return vals, self.p1_grad(v)[elem]

    def eval_velocity(self, u_full: np.ndarray, points: np.ndarray):
        """Velocity values (n, 2) and gradients (n, 2, 2) at points."""
        elem, ref = self.locate(points)
        N, dN = p2_reference(ref, self.nloc_v == 7)
        dN = np.einsum("nji,naj->nai", self.jac_inv[elem], dN)
        U = self.velocity_local(u_full)[elem]  # (n, 2, nloc)
        return np.einsum("nca,na->nc", U, N), np.einsum("nca,naj->ncj", U, dN)

    def eval_pressure(self, p: np.ndarray, points: np.ndarray) -> np.ndarray:
        elem, ref = self.locate(points)
        if self.nloc_q == 1:
            return p[self.Q.dof_map[elem, 0]]
        lam, _ = p1_reference(ref)
        return np.sum(p[self.Q.dof_map[elem]] * lam, axis=1)


# ----------------------------------------------------------------------
def lumped_mass(mesh: StructuredTriMesh) -> np.ndarray:
    """Diagonal of the lumped P1 mass matrix, ``m_i = sum_{K ni x_i} |K|/3``."""
    return np.bincount(
        mesh.elements.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=mesh.n_vertices
    )


def lumped_inner(disc: Discretization, a, b) -> float:
    """Trapezoidal-rule inner product of two P1_cont fields."""
    a = a.coeffs if isinstance(a, Field) else np.asarray(a)
    b = b.coeffs if isinstance(b, Field) else np.asarray(b)
    return float(np.sum(disc.lumped_mass * a * b))


def _quad_values(disc: Discretization, g) -> np.ndarray:
    """Values of ``g`` at element quadrature points, shape (nel, nq[, 2])."""
    if isinstance(g, Field):
        return field_at_quad(disc, g)
    if callable(g):
        return np.asarray(g(disc.qpoints[..., 0], disc.qpoints[..., 1]), dtype=float)
    return np.asarray(g, dtype=float)


def field_at_quad(disc: Discretization, f: Field) -> np.ndarray:
    kind = f.space.kind
    if kind == "P0_disc":
        return np.repeat(f.coeffs[:, None], disc.nq, axis=1)
    if kind == "P1_cont":
        return disc.p1_at_quad(f.coeffs)
    if kind == "P1_disc":
        return f.coeffs.reshape(-1, 3) @ disc.N1.T
    if kind in ("P2_cont", "P2_bubble") and f.space.dim == 2:
        return disc.velocity_at_quad(f.coeffs)[0]
    raise ValueError(f"cannot evaluate {kind} field")


def project_P0(disc: Discretization, g, levels: int = 0) -> Field:
    """Elementwise mean of ``g`` (callable ``g(x, y)``, Field, or quad values).

    For callables, ``levels > 0`` integrates on ``4**levels`` subtriangles
    per element.
    """
    if callable(g) and not isinstance(g, Field) and levels > 0:
        pts, wts = composite_rule(DEFAULT_QUAD_DEGREE, levels)
        m = disc.mesh
        P = m.vertices[m.elements]
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        means = np.empty(m.n_elements)
        chunk = max(1, 2_000_000 // len(wts))
        for s in range(0, m.n_elements, chunk):
            x = P[s : s + chunk, None, 0, :] + np.einsum("kij,qj->kqi", J[s : s + chunk], pts)
            v = np.asarray(g(x[..., 0], x[..., 1]), dtype=float)
            # a mean lies in the sampled range; clipping removes rounding overshoot
            means[s : s + chunk] = np.clip(v @ (wts / wts.sum()), v.min(axis=1), v.max(axis=1))
        return Field(disc.P0, means)
    vals = _quad_values(disc, g)
    means = np.sum(disc.W * vals, axis=1) / disc.area
    return Field(disc.P0, means)


def initial_levels(mesh, target: int = 256) -> int:
    """Subdivision depth so the composite initial-data rule resolves cells of size 1/target."""
    n = max(mesh.nx, mesh.ny)
    return max(0, int(np.ceil(np.log2(target / n)))) if n < target else 0


def _load_P1(disc: Discretization, g) -> np.ndarray:
    vals = _quad_values(disc, g)
    loc = np.einsum("kq,kq,qa->ka", disc.W, vals, disc.N1)
    return np.bincount(disc.mesh.elements.ravel(), weights=loc.ravel(), minlength=disc.mesh.n_vertices)


def project_P1(disc: Discretization, g) -> Field:
    """L2 projection onto P1_cont (consistent mass)."""
    b = _load_P1(disc, g)
    x = disc.mass_P1_solve(b)
    if not np.all(np.isfinite(x)):
        raise RuntimeError("P1 mass-matrix solve failed")
    return Field(disc.P1, x)


def project_P1_lumped(disc: Discretization, g) -> Field:
    """Mass-lumped projection onto P1_cont: nodal value ``(g, psi_i) / m_i``."""
    if isinstance(g, Field) and g.space.kind == "P0_disc":
        return Field(disc.P1, disc.lumped_projector @ g.coeffs)
    return Field(disc.P1, _load_P1(disc, g) / disc.lumped_mass)


def project_grad_P1(disc: Discretization, mu: np.ndarray) -> np.ndarray:
    """Componentwise L2 projection of the elementwise gradient of a P1 field; (nv, 2)."""
    g = disc.p1_grad(mu)  # (nel, 2)
    T = disc.mesh.elements
    nv = disc.mesh.n_vertices
    out = np.empty((nv, 2))
    for c in range(2):
        b = np.bincount(T.ravel(), weights=np.repeat(g[:, c] * disc.area / 3.0, 3), minlength=nv)
        out[:, c] = disc.mass_P1_solve(b)
    return out


def interpolate_velocity(disc: Discretization, expr: Callable) -> Field:
    """Nodal interpolation at P2 nodes (bubble coefficients zero)."""
    mesh = disc.mesh
    nodes = np.vstack([mesh.vertices, mesh.edge_midpoints])
    ux, uy = expr(nodes[:, 0], nodes[:, 1])
    nds = disc.V.dof_count
    coeffs = np.zeros(2 * nds)
    n = len(nodes)
    coeffs[:n] = ux
    coeffs[nds : nds + n] = uy
    coeffs[disc.velocity_fixed] = 0.0
    return Field(disc.V, coeffs)


def interpolate_initial(disc: Discretization, expr: Callable, space: Space) -> Field:
    """Initial data: elementwise means for P0 fields, nodal interpolation for velocity."""
    if space.kind == "P0_disc":
        return project_P0(disc, expr, levels=initial_levels(disc.mesh))
    if space.dim == 2:
        return interpolate_velocity(disc, expr)
    if space.kind == "P1_cont":
        v = disc.mesh.vertices
        return Field(space, np.asarray(expr(v[:, 0], v[:, 1]), dtype=float) * np.ones(len(v)))
    raise ValueError(f"no initial-data rule for {space.kind}")
