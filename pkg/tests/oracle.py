"""Brute-force reference evaluation of the discrete forms.

Deliberately shares nothing with the package except the mesh arrays and the
coefficient conventions (dof numbering and basis normalisation):

* element integrals use a Duffy-collapsed Gauss-Legendre product rule
  (8 x 8 points, exact well beyond the degrees involved);
* basis functions are evaluated from barycentric coordinates of physical
  points, obtained by solving a 3x3 system per point;
* edges, owners, normals and barycenter distances are rediscovered by
  looping over element pairs;
* nonsmooth edge integrands use the 3-point Gauss rule that defines the
  discrete forms, rebuilt here from ``numpy.polynomial.legendre``.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss

_g8, _w8 = leggauss(8)
_s = 0.5 * (_g8 + 1.0)
_ws = 0.5 * _w8
EDGE_T, EDGE_W = leggauss(3)
EDGE_T = 0.5 * (EDGE_T + 1.0)
EDGE_W = 0.5 * EDGE_W


def ref_rule():
    """Points (s, t(1-s)) on the unit triangle with Duffy weights (1-s)."""
    pts, wts = [], []
    for i, s in enumerate(_s):
        for j, t in enumerate(_s):
            pts.append((s, t * (1 - s)))
            wts.append(_ws[i] * _ws[j] * (1 - s))
    return np.array(pts), np.array(wts)


REF_PTS, REF_WTS = ref_rule()


class Oracle:
    def __init__(self, mesh, rho1, rho2, bubble=True):
        self.V = np.asarray(mesh.vertices, dtype=float)
        self.T = np.asarray(mesh.elements)
        self.nv = len(self.V)
        self.nel = len(self.T)
        self.rho_avg = 0.5 * (rho1 + rho2)
        self.rho_dif = 0.5 * (rho2 - rho1)
        self.bubble = bubble
        # edge numbering must follow the package (P2 midpoint dofs are nv + edge id)
        self.edge_id = {tuple(sorted(map(int, e))): i for i, e in enumerate(mesh.edge_vertices)}
        self.ne = len(self.edge_id)
        self.nds = self.nv + self.ne + (self.nel if bubble else 0)
        self._find_interior_edges()

    # ------------------------------------------------------------------
    def _find_interior_edges(self):
        owners = {}
        for k in range(self.nel):
            for a in range(3):
                e = tuple(sorted((int(self.T[k, a]), int(self.T[k, (a + 1) % 3]))))
                owners.setdefault(e, []).append(k)
        self.edges = []
        for e, ks in owners.items():
            if len(ks) != 2:
                continue
            K, L = min(ks), max(ks)
            A, B = self.V[e[0]], self.V[e[1]]
            t = B - A
            n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
            bK = self.V[self.T[K]].mean(axis=0)
            bL = self.V[self.T[L]].mean(axis=0)
            if np.dot(n, bL - bK) < 0:
                n = -n
            self.edges.append(dict(v=e, K=K, L=L, A=A, B=B, n=n, length=np.linalg.norm(t),
                                   D=np.linalg.norm(bL - bK)))

    # ------------------------------------------------------------------
    def bary(self, k, x):
        P = self.V[self.T[k]]
        M = np.vstack([P.T, np.ones(3)])
        lam = np.linalg.solve(M, np.array([x[0], x[1], 1.0]))
        dlam = np.linalg.inv(M)[:, :2]  # rows: grad lambda_i
        return lam, dlam

    def p2_basis(self, k, x):
        """Values (n,), gradients (n, 2) and global scalar dofs of the P2(+bubble) basis."""
        lam, dl = self.bary(k, x)
        vals, grads, dofs = [], [], []
        tri = self.T[k]
        for i in range(3):
            vals.append(lam[i] * (2 * lam[i] - 1))
            grads.append((4 * lam[i] - 1) * dl[i])
            dofs.append(int(tri[i]))
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            vals.append(4 * lam[a] * lam[b])
            grads.append(4 * (lam[b] * dl[a] + lam[a] * dl[b]))
            dofs.append(self.nv + self.edge_id[tuple(sorted((int(tri[a]), int(tri[b]))))])
        if self.bubble:
            vals.append(27 * lam[0] * lam[1] * lam[2])
            grads.append(27 * (lam[1] * lam[2] * dl[0] + lam[0] * lam[2] * dl[1] + lam[0] * lam[1] * dl[2]))
            dofs.append(self.nv + self.ne + k)
        return np.array(vals), np.array(grads), np.array(dofs)

    def vel(self, u, k, x):
        """Value (2,) and gradient (2, 2) [c, j] of a velocity field."""
        v, g, d = self.p2_basis(k, x)
        U = np.stack([u[d], u[self.nds + d]])
        return U @ v, U @ g

    def p1(self, f, k, x):
        lam, dl = self.bary(k, x)
        c = f[self.T[k]]
        return float(c @ lam), c @ dl

    def element_points(self, k):
        P = self.V[self.T[k]]
        J = np.column_stack([P[1] - P[0], P[2] - P[0]])
        det = abs(np.linalg.det(J))
        for (s, t), w in zip(REF_PTS, REF_WTS):
            yield P[0] + J @ np.array([s, t]), w * det

    def edge_points(self, e):
        for t, w in zip(EDGE_T, EDGE_W):
            yield e["A"] + t * (e["B"] - e["A"]), w * e["length"]

    # ------------------------------------------------------------------
    # forms
    def a_upw(self, u, phi, phibar):
        tot = 0.0
        for e in self.edges:
            K, L = e["K"], e["L"]
            for x, w in self.edge_points(e):
                un = self.vel(u, K, x)[0] @ e["n"]
                flux = max(un, 0.0) * phi[K] - max(-un, 0.0) * phi[L]
                tot += w * flux * (phibar[K] - phibar[L])
        return tot

    def b_upw(self, mu, phi, phibar):
        mob = lambda z: max(1 - z * z, 0.0)
        up = lambda z: mob(z) if z <= 0 else 1.0
        down = lambda z: 0.0 if z <= 0 else mob(z) - 1.0
        tot = 0.0
        for e in self.edges:
            K, L = e["K"], e["L"]
            jm = mu[self.T[K]].mean() - mu[self.T[L]].mean()
            A = max(up(phi[K]) + down(phi[L]), 0.0)
            B = max(up(phi[L]) + down(phi[K]), 0.0)
            tot += e["length"] / e["D"] * (max(jm, 0) * A - max(-jm, 0) * B) * (phibar[K] - phibar[L])
        return tot

    def c_h(self, phi, mu0, ubar):
        tot = 0.0
        for k in range(self.nel):
            for x, w in self.element_points(k):
                _, g = self.vel(ubar, k, x)
                tot -= w * (g[0, 0] + g[1, 1]) * phi[k] * mu0[k]
        for e in self.edges:
            K, L = e["K"], e["L"]
            for x, w in self.edge_points(e):
                ubn = self.vel(ubar, K, x)[0] @ e["n"]
                tot -= w * ubn * 0.5 * (phi[K] + phi[L]) * (mu0[K] - mu0[L])
        return tot

    def s_h(self, u, phi, mu0, ubar, delta):
        tot = 0.0
        for e in self.edges:
            K, L = e["K"], e["L"]
            for x, w in self.edge_points(e):
                un = self.vel(u, K, x)[0] @ e["n"]
                ubn = self.vel(ubar, K, x)[0] @ e["n"]
                S = np.sign(un) if delta == 0 else un / (abs(un) + delta)
                tot -= 0.5 * w * ubn * S * (phi[K] - phi[L]) * (mu0[K] - mu0[L])
        return tot

    def grad_projection(self, mu):
        """Consistent-mass L2 projection of the broken gradient of a P1 field."""
        M = np.zeros((self.nv, self.nv))
        b = np.zeros((self.nv, 2))
        for k in range(self.nel):
            tri = self.T[k]
            for x, w in self.element_points(k):
                lam, dl = self.bary(k, x)
                g = mu[tri] @ dl
                M[np.ix_(tri, tri)] += w * np.outer(lam, lam)
                b[tri] += w * np.outer(lam, g)
        return np.linalg.solve(M, b)

    def J_h(self, phi0h, gproj, ubar):
        """``int rho_dif M(phi0h) Pi_1(grad mu) . ubar``."""
        tot = 0.0
        for k in range(self.nel):
            for x, w in self.element_points(k):
                p0, _ = self.p1(phi0h, k, x)
                lam, _ = self.bary(k, x)
                G = lam @ gproj[self.T[k]]
                tot += w * self.rho_dif * max(1 - p0 * p0, 0.0) * G @ self.vel(ubar, k, x)[0]
        return tot

    def t_h(self, u1, u0, phi1h, phi0h, gproj, ubar, dt):
        tot = 0.0
        for k in range(self.nel):
            for x, w in self.element_points(k):
                p1, _ = self.p1(phi1h, k, x)
                p0, _ = self.p1(phi0h, k, x)
                lam, _ = self.bary(k, x)
                G = lam @ gproj[self.T[k]]
                v1, g1 = self.vel(u1, k, x)
                v0, _ = self.vel(u0, k, x)
                vb, gb = self.vel(ubar, k, x)
                drho = self.rho_dif * (p1 - p0) / dt
                flux = (self.rho_avg + self.rho_dif * p0) * v0 - self.rho_dif * max(1 - p0 * p0, 0.0) * G
                grad_dot = g1.T @ vb + gb.T @ v1
                tot += 0.5 * w * (drho * (v1 @ vb) - flux @ grad_dot)
        return tot

    def viscous(self, u, ubar, eta):
        tot = 0.0
        for k in range(self.nel):
            for x, w in self.element_points(k):
                _, g = self.vel(u, k, x)
                _, gb = self.vel(ubar, k, x)
                D = 0.5 * (g + g.T)
                Db = 0.5 * (gb + gb.T)
                tot += 2 * eta * w * np.sum(D * Db)
        return tot

    def divergence(self, u, pbar, pressure="P1_disc"):
        tot = 0.0
        for k in range(self.nel):
            for x, w in self.element_points(k):
                _, g = self.vel(u, k, x)
                if pressure == "P1_disc":
                    lam, _ = self.bary(k, x)
                    q = pbar[3 * k : 3 * k + 3] @ lam
                else:
                    q = pbar[k]
                tot += w * (g[0, 0] + g[1, 1]) * q
        return tot

    def gravity(self, phih, ubar, g):
        tot = 0.0
        for k in range(self.nel):
            for x, w in self.element_points(k):
                p, _ = self.p1(phih, k, x)
                tot += w * (self.rho_avg + self.rho_dif * p) * (np.asarray(g) @ self.vel(ubar, k, x)[0])
        return tot
