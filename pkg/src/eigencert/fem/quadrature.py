"""Gauss rules on triangles (collapsed Gauss-Jacobi) and on segments."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Rule exact for polynomials of total degree ``degree`` on a triangle.

    Returns
    -------
    bary : ndarray, shape (q, 3)
        Barycentric coordinates of the nodes.
    weights : ndarray, shape (q,)
        Weights summing to 1 (multiply by the triangle area).
    """
    n = degree // 2 + 1
    # Duffy collapse: x in [0,1] with weight (1-x), y in [0,1]
    a, wa = roots_jacobi(n, 1.0, 0.0)
    b, wb = roots_legendre(n)
    s = (a + 1.0) / 2.0
    t = (b + 1.0) / 2.0
    ws = wa / 4.0
    wt = wb / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    l1 = S.ravel()
    l2 = ((1.0 - S) * T).ravel()
    l0 = 1.0 - l1 - l2
    w = np.outer(ws, wt).ravel() * 2.0
    bary = np.stack([l0, l1, l2], axis=1)
    bary.flags.writeable = False
    w.flags.writeable = False
    return bary, w


@lru_cache(maxsize=None)
def segment_rule(degree: int):
    """Gauss-Legendre rule on [0, 1]: nodes and weights summing to 1."""
    n = degree // 2 + 1
    x, w = roots_legendre(n)
    nodes, weights = (x + 1.0) / 2.0, w / 2.0
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights
