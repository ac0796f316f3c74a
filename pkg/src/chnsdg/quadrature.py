"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1)."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule exact for ``degree``.

    Returns ``(points, weights)`` with points of shape ``(nq, 2)`` and
    weights summing to the reference area 1/2.
    """
    n = max(1, (degree + 2) // 2)
    # weight (1 - s) on [0, 1] for the collapsed direction
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xj + 1.0)
    ws = wj / 4.0
    xl, wl = roots_legendre(n)
    t = 0.5 * (xl + 1.0)
    wt = wl / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    points = np.stack([S.ravel(), (T * (1.0 - S)).ravel()], axis=1)
    weights = np.outer(ws, wt).ravel()
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


@lru_cache(maxsize=None)
def composite_rule(degree: int, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """``triangle_rule(degree)`` applied on ``4**levels`` congruent subtriangles.

    Used for nonsmooth or steep integrands (interface profiles, kinks) where
    a single high-degree rule per element under-resolves the integrand.
    """
    pts, wts = triangle_rule(degree)
    tris = [np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])]
    for _ in range(levels):
        nxt = []
        for a, b, c in tris:
            ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
            nxt += [np.array([a, ab, ca]), np.array([ab, b, bc]), np.array([ca, bc, c]), np.array([bc, ca, ab])]
        tris = nxt
    scale = 0.25**levels
    points = np.vstack([t[0] + pts @ np.column_stack([t[1] - t[0], t[2] - t[0]]).T for t in tris])
    weights = np.tile(wts * scale, len(tris))
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights
