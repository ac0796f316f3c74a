"""Structured triangulations of rectangles with full edge connectivity.

Each square cell of an ``nx`` x ``ny`` grid is halved by one of its
diagonals.  With the default checkerboard pattern the segment joining the
barycenters of two neighbouring triangles is orthogonal to their common
edge, which is what the two-point chemical-potential flux relies on.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# 3-point Gauss-Legendre on [0, 1]; exact for degree 5.
EDGE_QUAD_POINTS = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
EDGE_QUAD_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0

HYPOTHESIS_TOL = 1e-10


class MeshError(ValueError):
    pass


class HypothesisViolation(MeshError):
    """Barycenter segment not orthogonal to an interior edge."""

    def __init__(self, edge: int, defect: float):
        self.edge = edge
        self.defect = defect
        super().__init__(
            f"interior edge {edge}: barycenter segment not orthogonal to edge "
            f"(relative defect {defect:.3e} > {HYPOTHESIS_TOL:g})"
        )


@dataclass(frozen=True)
class InteriorEdge:
    """View of one interior edge; ``normal`` points from ``K`` into ``L``."""

    K: int
    L: int
    normal: np.ndarray
    length: float
    D_e: float
    quad_points: np.ndarray
    quad_weights: np.ndarray


class StructuredTriMesh:
    """Triangulated rectangle.

    Geometry is stored as flat arrays.  Local edge ``j`` of an element joins
    local vertices ``(j+1)%3`` and ``(j+2)%3`` (it is opposite vertex ``j``).
    For interior edges the owner ``K`` is the element with the smaller index.
    """

    def __init__(self, domain, nx: int, ny: int, vertices: np.ndarray, elements: np.ndarray):
        self.domain = tuple(float(v) for v in domain)
        self.nx = int(nx)
        self.ny = int(ny)
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.validated = False
        self._build_connectivity()

    # ------------------------------------------------------------------
    def _build_connectivity(self) -> None:
        V, T = self.vertices, self.elements
        nel = len(T)
        p0, p1, p2 = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
        d1, d2 = p1 - p0, p2 - p0
        self.areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(self.areas <= 0):
            raise MeshError("elements must be counterclockwise with positive area")
        self.barycenters = (p0 + p1 + p2) / 3.0

        # local edge j is opposite local vertex j
        loc = np.array([[1, 2], [2, 0], [0, 1]])
        pairs = T[:, loc]  # (nel, 3, 2)
        key = np.sort(pairs.reshape(-1, 2), axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        self.edge_vertices = uniq
        self.element_edges = inv.reshape(nel, 3)
        ne = len(uniq)

        owner = np.full(ne, -1, dtype=np.int64)
        neigh = np.full(ne, -1, dtype=np.int64)
        owner_loc = np.full(ne, -1, dtype=np.int64)
        for flat, e in enumerate(inv):
            k = flat // 3
            if owner[e] < 0:
                owner[e] = k
                owner_loc[e] = flat % 3
            else:
                neigh[e] = k
        counts = np.bincount(inv, minlength=ne)
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two elements")
        self.edge_elements = np.stack([owner, neigh], axis=1)

        A = V[uniq[:, 0]]
        B = V[uniq[:, 1]]
        t = B - A
        lengths = np.hypot(t[:, 0], t[:, 1])
        n = np.stack([t[:, 1], -t[:, 0]], axis=1) / lengths[:, None]
        mid = 0.5 * (A + B)
        flip = np.einsum("ij,ij->i", mid - self.barycenters[owner], n) < 0
        n[flip] *= -1.0
        self.edge_lengths = lengths
        self.edge_normals = n  # exterior to owner (outward on the boundary)
        self.edge_midpoints = mid

        interior = neigh >= 0
        self.interior_edge_ids = np.nonzero(interior)[0]
        self.boundary_edge_ids = np.nonzero(~interior)[0]
        ie = self.interior_edge_ids
        self.K = owner[ie]
        self.L = neigh[ie]
        self.normals = n[ie]
        self.lengths = lengths[ie]
        self.D_e = np.linalg.norm(self.barycenters[self.L] - self.barycenters[self.K], axis=1)
        be = self.boundary_edge_ids
        self.boundary_edges = np.stack([owner[be], owner_loc[be]], axis=1)
        self.boundary_vertices = np.unique(uniq[be].ravel())

    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_edges(self) -> int:
        return len(self.edge_vertices)

    @property
    def n_interior_edges(self) -> int:
        return len(self.interior_edge_ids)

    @property
    def h(self) -> float:
        """Largest element diameter."""
        V, T = self.vertices, self.elements
        diam = np.zeros(len(T))
        for a, b in ((0, 1), (1, 2), (2, 0)):
            diam = np.maximum(diam, np.linalg.norm(V[T[:, a]] - V[T[:, b]], axis=1))
        return float(diam.max())

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.domain
        return (x1 - x0) * (y1 - y0)

    def interior_edge(self, i: int) -> InteriorEdge:
        e = self.interior_edge_ids[i]
        A, B = self.vertices[self.edge_vertices[e]]
        pts = A[None, :] + EDGE_QUAD_POINTS[:, None] * (B - A)[None, :]
        return InteriorEdge(
            K=int(self.K[i]),
            L=int(self.L[i]),
            normal=self.normals[i].copy(),
            length=float(self.lengths[i]),
            D_e=float(self.D_e[i]),
            quad_points=pts,
            quad_weights=EDGE_QUAD_WEIGHTS * self.lengths[i],
        )

    def orthogonality_defects(self) -> np.ndarray:
        """``|(b_K - b_L) . t_e| / h`` for every interior edge."""
        tang = np.stack([-self.normals[:, 1], self.normals[:, 0]], axis=1)
        diff = self.barycenters[self.K] - self.barycenters[self.L]
        return np.abs(np.einsum("ij,ij->i", diff, tang)) / self.h

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Element index containing each point (structured meshes only)."""
        pts = np.asarray(points, dtype=float)
        x0, x1, y0, y1 = self.domain
        hx = (x1 - x0) / self.nx
        hy = (y1 - y0) / self.ny
        sx = (pts[:, 0] - x0) / hx
        sy = (pts[:, 1] - y0) / hy
        i = np.clip(np.floor(sx).astype(np.int64), 0, self.nx - 1)
        j = np.clip(np.floor(sy).astype(np.int64), 0, self.ny - 1)
        fx = sx - i
        fy = sy - j
        main = self._main_diagonal[j * self.nx + i]
        # main diagonal: lower-right triangle when fx >= fy
        second_main = fy > fx
        # anti-diagonal: upper-right triangle when fx + fy > 1
        second_anti = fx + fy > 1.0
        second = np.where(main, second_main, second_anti)
        return 2 * (j * self.nx + i) + second.astype(np.int64)

    def write_vtk(self, path, cell_data=None, point_data=None, title="chnsdg mesh") -> None:
        from .io import write_vtk_grid

        write_vtk_grid(Path(path), self, cell_data=cell_data, point_data=point_data, title=title)


def build_mesh(domain, nx: int, ny: int, diagonals: str = "checkerboard") -> StructuredTriMesh:
    """Halve each square of an ``nx`` x ``ny`` grid of ``domain`` along a diagonal.

    ``domain`` is ``(x0, x1, y0, y1)``.  Square ``(i, j)`` uses the main
    diagonal when ``i + j`` is even and the anti-diagonal otherwise;
    ``diagonals="uniform"`` uses the main diagonal everywhere (which breaks
    the orthogonality property and exists for testing).
    """
    if int(nx) < 1 or int(ny) < 1:
        raise MeshError(f"nx and ny must be >= 1, got nx={nx}, ny={ny}")
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {domain!r}")
    if diagonals not in ("checkerboard", "uniform"):
        raise MeshError(f"unknown diagonal pattern {diagonals!r}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    j, i = np.divmod(np.arange(nx * ny), nx)
    a = j * (nx + 1) + i
    b = a + 1
    c = b + (nx + 1)
    d = a + (nx + 1)
    if diagonals == "checkerboard":
        main = (i + j) % 2 == 0
    else:
        main = np.ones(nx * ny, dtype=bool)
    t1 = np.where(main[:, None], np.stack([a, b, c], 1), np.stack([a, b, d], 1))
    t2 = np.where(main[:, None], np.stack([a, c, d], 1), np.stack([b, c, d], 1))
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = t1
    elements[1::2] = t2

    mesh = StructuredTriMesh((x0, x1, y0, y1), nx, ny, vertices, elements)
    mesh._main_diagonal = main
    return mesh


def validate_hypothesis(mesh: StructuredTriMesh) -> float:
    """Return the largest relative orthogonality defect over interior edges.

    Raises :class:`HypothesisViolation` naming the worst edge if the defect
    exceeds ``1e-10``.  On success the mesh is marked as validated.
    """
    defects = mesh.orthogonality_defects()
    if defects.size == 0:
        mesh.validated = True
        return 0.0
    worst = int(np.argmax(defects))
    if defects[worst] > HYPOTHESIS_TOL:
        raise HypothesisViolation(worst, float(defects[worst]))
    mesh.validated = True
    return float(defects[worst])
