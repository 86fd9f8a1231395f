"""Lowest-order-plus-one Raviart-Thomas space (RT1) on triangles.

The space on each element is ``P1^2 + x * P1_hom`` (dimension 8). Degrees
of freedom are, per edge, the normal-flux moments against the two linear
hats of the edge (low and high vertex index) and, per element, the means
of the two Cartesian components. Edge normals are oriented globally, so the
edge dofs are single-valued and normal traces are continuous by
construction.

Local element bases are obtained by inverting the 8x8 matrix of dof
functionals applied to scaled monomials around the centroid.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import TriMesh, _LOCAL_EDGES
from .quadrature import segment_rule, triangle_rule

N_LOCAL = 8
CHUNK = 20000


def _monomials(xi: np.ndarray) -> np.ndarray:
    """Scaled RT1 monomials at local coordinates ``xi`` (..., 2) -> (..., 8, 2)."""
    x1, x2 = xi[..., 0], xi[..., 1]
    one, zero = np.ones_like(x1), np.zeros_like(x1)
    comps = [
        (one, zero), (zero, one),
        (x1, zero), (x2, zero), (zero, x1), (zero, x2),
        (x1 * x1, x1 * x2), (x1 * x2, x2 * x2),
    ]
    return np.stack([np.stack(c, axis=-1) for c in comps], axis=-2)


def _monomial_divergence(xi: np.ndarray) -> np.ndarray:
    """Divergence in the scaled variable, (..., 8); divide by h for x."""
    x1, x2 = xi[..., 0], xi[..., 1]
    one, zero = np.ones_like(x1), np.zeros_like(x1)
    return np.stack([zero, zero, one, zero, zero, one, 3 * x1, 3 * x2], axis=-1)


@dataclass(frozen=True, eq=False)
class RT1Space:
    """Global RT1 space on a mesh.

    Global numbering: edge ``e`` carries dofs ``2e`` (low-vertex hat) and
    ``2e + 1`` (high-vertex hat); triangle ``t`` carries interior dofs
    ``2 n_edges + 2t`` and ``2 n_edges + 2t + 1``.
    """

    mesh: TriMesh

    @property
    def dim(self) -> int:
        return 2 * self.mesh.n_edges + 2 * self.mesh.n_triangles

    @cached_property
    def local_to_global(self) -> np.ndarray:
        """Global dof of each local dof, shape (nt, 8)."""
        mesh = self.mesh
        te = mesh.triangle_edges
        out = np.empty((mesh.n_triangles, N_LOCAL), dtype=np.int64)
        out[:, 0:6:2] = 2 * te
        out[:, 1:6:2] = 2 * te + 1
        base = 2 * mesh.n_edges + 2 * np.arange(mesh.n_triangles)
        out[:, 6] = base
        out[:, 7] = base + 1
        return out

    @cached_property
    def scale(self) -> np.ndarray:
        return self.mesh.diameters

    @cached_property
    def coefficients(self) -> np.ndarray:
        """Monomial coefficients of the local basis, (nt, 8 monomials, 8 dofs)."""
        mesh = self.mesh
        nt = mesh.n_triangles
        x = mesh.vertices[mesh.triangles]
        c = mesh.centroids
        h = self.scale
        D = np.empty((nt, N_LOCAL, N_LOCAL))
        s, ws = segment_rule(5)
        for j in range(3):
            pa = x[:, _LOCAL_EDGES[j, 0]]
            pb = x[:, _LOCAL_EDGES[j, 1]]
            ga = mesh.triangles[:, _LOCAL_EDGES[j, 0]]
            gb = mesh.triangles[:, _LOCAL_EDGES[j, 1]]
            swap = ga > gb
            lo = np.where(swap[:, None], pb, pa)
            hi = np.where(swap[:, None], pa, pb)
            tangent = hi - lo
            length = np.linalg.norm(tangent, axis=1)
            normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1) / length[:, None]
            pts = lo[:, None, :] + s[None, :, None] * tangent[:, None, :]
            mono = _monomials((pts - c[:, None, :]) / h[:, None, None])
            flux = np.einsum("tqmd,td->tqm", mono, normal)
            wl = length[:, None] * ws[None, :]
            D[:, 2 * j, :] = np.einsum("tq,tqm->tm", wl * (1 - s)[None, :], flux)
            D[:, 2 * j + 1, :] = np.einsum("tq,tqm->tm", wl * s[None, :], flux)
        bary, w = triangle_rule(2)
        pts = np.einsum("qk,tkd->tqd", bary, x)
        mono = _monomials((pts - c[:, None, :]) / h[:, None, None])
        D[:, 6, :] = np.einsum("q,tqm->tm", w, mono[..., 0])
        D[:, 7, :] = np.einsum("q,tqm->tm", w, mono[..., 1])
        C = np.linalg.inv(D)
        C.flags.writeable = False
        return C

    def evaluate(self, bary: np.ndarray, tris=slice(None)):
        """Basis values and divergences at barycentric points.

        Returns
        -------
        values : ndarray, shape (nt, q, 8, 2)
        divergence : ndarray, shape (nt, q, 8)
        """
        mesh = self.mesh
        x = mesh.vertices[mesh.triangles[tris]]
        c = x.mean(axis=1)
        h = self.scale[tris]
        pts = np.einsum("qk,tkd->tqd", bary, x)
        xi = (pts - c[:, None, :]) / h[:, None, None]
        C = self.coefficients[tris]
        vals = np.einsum("tqmd,tmi->tqid", _monomials(xi), C)
        div = np.einsum("tqm,tmi->tqi", _monomial_divergence(xi), C) / h[:, None, None]
        return vals, div

    def field_values(self, coeffs: np.ndarray, bary: np.ndarray, tris=slice(None)) -> np.ndarray:
        """Values of global fields ``coeffs`` (dim, r) at points, (nt, q, r, 2)."""
        vals, _ = self.evaluate(bary, tris)
        loc = np.asarray(coeffs)[self.local_to_global[tris]]  # (nt, 8, r)
        return np.einsum("tqid,tir->tqrd", vals, loc)

    @cached_property
    def element_matrices(self):
        """Element integrals used by the patch problems.

        Returns
        -------
        mass : (nt, 8, 8)
            ``int_K phi_i . phi_j``.
        div_hat : (nt, 3, 8)
            ``int_K lambda_a div phi_i`` for the barycentric functions.
        hat_moment : (nt, 3, 8, 2)
            ``int_K lambda_a phi_i``.
        """
        mesh = self.mesh
        nt = mesh.n_triangles
        bary, w = triangle_rule(4)
        mass = np.empty((nt, N_LOCAL, N_LOCAL))
        div_hat = np.empty((nt, 3, N_LOCAL))
        hat_moment = np.empty((nt, 3, N_LOCAL, 2))
        area = mesh.areas
        for start in range(0, nt, CHUNK):
            sl = slice(start, min(start + CHUNK, nt))
            vals, div = self.evaluate(bary, sl)
            wa = w[None, :] * area[sl, None]
            mass[sl] = np.einsum("tq,tqid,tqjd->tij", wa, vals, vals)
            div_hat[sl] = np.einsum("tq,qa,tqi->tai", wa, bary, div)
            hat_moment[sl] = np.einsum("tq,qa,tqid->taid", wa, bary, vals)
        for arr in (mass, div_hat, hat_moment):
            arr.flags.writeable = False
        return mass, div_hat, hat_moment

    def normal_trace_jumps(self, coeffs: np.ndarray, points: int = 3) -> float:
        """Largest jump of the normal component across interior edges.

        Evaluates each field from both sides at interior points of every
        shared edge; an independent check of the global numbering.
        """
        mesh = self.mesh
        coeffs = np.asarray(coeffs).reshape(self.dim, -1)
        nt = mesh.n_triangles
        s = (np.arange(points) + 1.0) / (points + 1.0)
        ends = mesh.edges
        tangent = mesh.vertices[ends[:, 1]] - mesh.vertices[ends[:, 0]]
        normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
        normal /= np.linalg.norm(normal, axis=1)[:, None]
        te = mesh.triangle_edges
        traces = np.empty((nt, 3, points, coeffs.shape[1]))
        rows = np.arange(nt)
        for j in range(3):
            a_loc, b_loc = _LOCAL_EDGES[j]
            lo_is_a = mesh.triangles[:, a_loc] < mesh.triangles[:, b_loc]
            lo = np.where(lo_is_a, a_loc, b_loc)
            hi = np.where(lo_is_a, b_loc, a_loc)
            for q, sq in enumerate(s):
                bary = np.zeros((nt, 3))
                bary[rows, lo] = 1 - sq
                bary[rows, hi] = sq
                x = np.einsum("tk,tkd->td", bary, mesh.vertices[mesh.triangles])
                xi = (x - mesh.centroids) / self.scale[:, None]
                vals = np.einsum("tmd,tmi->tid", _monomials(xi), self.coefficients)
                field = np.einsum("tid,tir->trd", vals, coeffs[self.local_to_global])
                traces[:, j, q] = np.einsum("trd,td->tr", field, normal[te[:, j]])
        flat_edges = te.ravel()
        order = np.argsort(flat_edges, kind="stable")
        sorted_edges = flat_edges[order]
        first = np.flatnonzero(np.r_[True, sorted_edges[1:] != sorted_edges[:-1]])
        counts = np.diff(np.r_[first, len(order)])
        pairs = first[counts == 2]
        if pairs.size == 0:
            return 0.0
        flat = traces.reshape(nt * 3, points, -1)
        diff = flat[order[pairs]] - flat[order[pairs + 1]]
        return float(np.max(np.abs(diff)))
