"""Equilibrated flux reconstruction on vertex patches.

For every vertex ``a`` a small mixed problem is solved on the patch of
triangles sharing ``a``: find the RT1 field closest to ``-psi_a grad u``
whose divergence equals the discontinuous-P1 projection of
``lambda u psi_a - grad u . grad psi_a``. Summing the patch fields gives a
global H(div) field with divergence ``lambda u``.

For a cluster the scalar ``lambda u_j`` may be replaced by
``sum_k H_kj u_k`` with the Ritz matrix ``H``; the fluxes are then linear
in the frame, so any orthogonal remixing of the cluster vectors remixes
the fluxes the same way.

Patches with the same number of triangles and unknowns are solved together
as one batched dense system.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import PatchIncompatible
from ..linalg import SaddleSystem, solve_saddle_batched
from .assembly import element_stiffness, p1_gradients
from .mesh import TriMesh
from .rt1 import N_LOCAL, RT1Space

COMPAT_TOL = 1e-10
DIV_TOL = 1e-9
BATCH = 4000

# int_K lam_g lam_a lam_b = |K| * 2 * (product of factorials) / (sum + 2)!
_TRIPLE = np.empty((3, 3, 3))
for _g in range(3):
    for _a in range(3):
        for _b in range(3):
            _n = len({_g, _a, _b})
            _TRIPLE[_g, _a, _b] = {1: 1 / 10, 2: 1 / 30, 3: 1 / 60}[_n]
_PAIR = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True, eq=False)
class PatchLayout:
    """Local numbering of all vertex patches of a mesh.

    Incidences ``(vertex, triangle)`` are sorted by vertex; ``inc_start[a]``
    is the first incidence of vertex ``a``. Free RT1 unknowns of patch ``a``
    are ``free_dofs[free_start[a]:free_start[a+1]]`` (global ids, sorted);
    ``local_index[i, l]`` maps local dof ``l`` of incidence ``i`` to its
    patch position, or to ``n_free[a]`` when the dof is fixed to zero.
    """

    space: RT1Space

    @property
    def mesh(self) -> TriMesh:
        return self.space.mesh

    @cached_property
    def _tables(self):
        mesh = self.mesh
        nt = mesh.n_triangles
        inc_t = np.repeat(np.arange(nt), 3)
        inc_pos = np.tile(np.arange(3), nt)
        inc_v = mesh.triangles.ravel()
        order = np.lexsort((inc_t, inc_v))
        inc_t, inc_pos, inc_v = inc_t[order], inc_pos[order], inc_v[order]
        nv = mesh.n_vertices
        n_tri = np.bincount(inc_v, minlength=nv)
        inc_start = np.r_[0, np.cumsum(n_tri)]

        bverts = mesh.boundary_vertices
        bedges = mesh.boundary_edges
        te = mesh.triangle_edges[inc_t]  # (ni, 3)
        free = np.ones((len(inc_t), N_LOCAL), dtype=bool)
        for j in range(3):
            opposite = inc_pos == j
            # the edge facing the patch centre is on the patch boundary:
            # free only where it lies on the domain boundary
            ok = ~opposite | (bverts[inc_v] & bedges[te[:, j]])
            free[:, 2 * j] = ok
            free[:, 2 * j + 1] = ok
        gdof = self.space.local_to_global[inc_t]
        dim = self.space.dim
        keys = inc_v[:, None].astype(np.int64) * dim + gdof
        uniq, inverse = np.unique(keys[free], return_inverse=True)
        owner = uniq // dim
        free_dofs = uniq % dim
        n_free = np.bincount(owner, minlength=nv)
        free_start = np.r_[0, np.cumsum(n_free)]
        local = np.empty(keys.shape, dtype=np.int64)
        local[free] = inverse - free_start[np.broadcast_to(inc_v[:, None], keys.shape)[free]]
        fixed_rows = np.broadcast_to(n_free[inc_v][:, None], keys.shape)
        local[~free] = fixed_rows[~free]
        return dict(inc_t=inc_t, inc_pos=inc_pos, inc_v=inc_v, inc_start=inc_start,
                    n_tri=n_tri, free_dofs=free_dofs, free_start=free_start,
                    n_free=n_free, local=local)

    def groups(self):
        """Vertex groups sharing (triangle count, free count, boundary flag)."""
        bv = self.mesh.boundary_vertices
        sig = np.stack([self.n_tri, self.n_free, bv.astype(np.int64)], axis=1)
        uniq, inv = np.unique(sig, axis=0, return_inverse=True)
        inv = np.asarray(inv).ravel()
        for g, (nt, nf, b) in enumerate(uniq):
            yield int(nt), int(nf), bool(b), np.flatnonzero(inv == g)


for _name in ("inc_t", "inc_pos", "inc_v", "inc_start", "n_tri",
              "free_dofs", "free_start", "n_free", "local"):
    setattr(PatchLayout, _name, property(lambda self, _n=_name: self._tables[_n]))


def _source(u: np.ndarray, lams) -> np.ndarray:
    """Nodal values of ``lambda u``: per-column values or a Ritz matrix."""
    lams = np.asarray(lams, dtype=float)
    r = u.shape[1]
    if lams.ndim == 2:
        if lams.shape != (r, r):
            raise ValueError(f"Ritz matrix of shape {lams.shape} for {r} fields")
        return u @ lams
    return u * np.broadcast_to(np.atleast_1d(lams), (r,))


def _patch_blocks(layout: PatchLayout, verts: np.ndarray, n_t: int, n_f: int,
                  src: np.ndarray, grads_u: np.ndarray):
    """Assemble A, B, f, g for a batch of patches of equal size.

    ``src`` holds nodal values of the divergence target (nv, r) and
    ``grads_u`` elementwise gradients (nt, r, 2). Returns full-size blocks including all ``3 n_t`` pressure
    rows; the caller drops one row for interior patches.
    """
    space = layout.space
    mesh = layout.mesh
    mass, div_hat, hat_moment = space.element_matrices
    P = len(verts)
    inc = layout.inc_start[verts][:, None] + np.arange(n_t)[None, :]  # (P, t)
    tri = layout.inc_t[inc]
    pos = layout.inc_pos[inc]
    loc = layout.local[inc]  # (P, t, 8)
    nf1 = n_f + 1
    nq = 3 * n_t
    pidx = np.arange(P)[:, None, None, None]

    flat = (pidx * nf1 + loc[:, :, :, None]) * nf1 + loc[:, :, None, :]
    A = np.bincount(flat.ravel(), weights=mass[tri].ravel(), minlength=P * nf1 * nf1)
    A = A.reshape(P, nf1, nf1)[:, :n_f, :n_f]

    rows = 3 * np.arange(n_t)[None, :, None, None] + np.arange(3)[None, None, :, None]
    flat = (pidx * nq + rows) * nf1 + loc[:, :, None, :]
    B = np.bincount(flat.ravel(), weights=div_hat[tri].ravel(), minlength=P * nq * nf1)
    B = B.reshape(P, nq, nf1)[:, :, :n_f]

    r = src.shape[1]
    hm = np.take_along_axis(hat_moment[tri], pos[:, :, None, None, None], axis=2)[:, :, 0]  # (P,t,8,2)
    gu = grads_u[tri]  # (P, t, r, 2)
    fl = -np.einsum("ptid,ptrd->ptir", hm, gu)
    flat = ((np.arange(P)[:, None, None] * nf1 + loc)[..., None] * r + np.arange(r)).ravel()
    f = np.bincount(flat, weights=fl.ravel(), minlength=P * nf1 * r).reshape(P, nf1, r)[:, :n_f]

    area = mesh.areas[tri]  # (P, t)
    sk = src[mesh.triangles[tri]]  # (P, t, 3, r)
    trip = _TRIPLE[:, pos, :]  # (3g, P, t, 3b)
    mass_term = np.einsum("ptgr,gptb->ptbr", sk, trip) * area[:, :, None, None]
    ghat = p1_gradients(mesh)[tri]  # (P, t, 3, 2)
    gpsi = np.take_along_axis(ghat, pos[:, :, None, None], axis=2)[:, :, 0]  # (P, t, 2)
    stiff = np.einsum("ptrd,ptd->ptr", gu, gpsi) * area[:, :, None] / 3.0
    g = (mass_term - stiff[:, :, None, :]).reshape(P, nq, r)
    return A, B, f, g


@dataclass(frozen=True, eq=False)
class EquilibratedFlux:
    """Global RT1 fields, one column per cluster member.

    Attributes
    ----------
    space : RT1Space
    coefficients : ndarray, shape (dim, r)
    compatibility : float
        Largest scaled mean of an interior patch constraint right-hand side.
    divergence_defect : float
        Largest relative violation of the elementwise divergence identity.
    """

    space: RT1Space
    coefficients: np.ndarray
    compatibility: float
    divergence_defect: float


def divergence_defect(space: RT1Space, coeffs: np.ndarray, u: np.ndarray, lams) -> float:
    """Relative size of ``int_K (div sigma - lambda u) q`` over all P1 ``q``.

    ``lams`` as in :func:`equilibrate_flux`.
    """
    mesh = space.mesh
    _, div_hat, _ = space.element_matrices
    coeffs = np.asarray(coeffs).reshape(space.dim, -1)
    src = _source(np.asarray(u, dtype=float).reshape(mesh.n_vertices, -1), lams)
    loc = coeffs[space.local_to_global]  # (nt, 8, r)
    lhs = np.einsum("tbi,tir->tbr", div_hat, loc)
    rhs = np.einsum("gb,tgr->tbr", _PAIR, src[mesh.triangles]) * mesh.areas[:, None, None]
    scale = np.max(np.abs(rhs)) if rhs.size else 0.0
    if scale == 0.0:
        return float(np.max(np.abs(lhs), initial=0.0))
    return float(np.max(np.abs(lhs - rhs)) / scale)


def equilibrate_flux(mesh: TriMesh, u, lams, *, space: RT1Space | None = None,
                     layout: PatchLayout | None = None, compat_tol: float = COMPAT_TOL,
                     div_tol: float = DIV_TOL, batch: int = BATCH) -> EquilibratedFlux:
    """Patchwise equilibrated fluxes for discrete eigenpairs.

    Parameters
    ----------
    mesh : TriMesh
    u : ndarray, shape (nv,) or (nv, r)
        Nodal values on all vertices (zero on the boundary).
    lams : float, ndarray of shape (r,) or (r, r)
        Matching discrete eigenvalues, or the symmetric Ritz matrix
        ``U^T K U`` of an M-orthonormal frame spanning discrete
        eigenvectors (the divergence target is then ``u @ lams``).
    compat_tol : float
        Allowed mean of an interior patch constraint right-hand side. The
        mean equals the residual of the discrete eigen-equation at the patch
        vertex and is measured relative to ``max|u| * sum_b |K_ab|``, the
        size of the terms that cancel in it.

    Raises
    ------
    PatchIncompatible
        If an interior patch constraint is not mean-free to ``compat_tol``
        or the assembled divergence misses ``lambda u`` by more than
        ``div_tol``.
    """
    space = space if space is not None else RT1Space(mesh)
    layout = layout if layout is not None else PatchLayout(space)
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = u.reshape(mesh.n_vertices, -1)
    src = _source(u, lams)
    r = u.shape[1]
    grads = np.einsum("tkd,tkr->trd", p1_gradients(mesh), u[mesh.triangles])
    # size of the cancelling terms in a patch mean: sum_b |K_ab| * max|u|
    stiff_abs = np.bincount(mesh.triangles.ravel(),
                            weights=np.abs(element_stiffness(mesh)).sum(axis=1).ravel(),
                            minlength=mesh.n_vertices)
    u_max = np.abs(u).max(axis=0)
    worst_compat = 0.0
    pieces_v, pieces_d, pieces_x = [], [], []
    for n_t, n_f, boundary, verts in layout.groups():
        for start in range(0, len(verts), batch):
            vs = verts[start:start + batch]
            A, B, f, g = _patch_blocks(layout, vs, n_t, n_f, src, grads)
            if not boundary:
                total = g.sum(axis=1)
                scale = stiff_abs[vs][:, None] * u_max[None, :]
                rel = np.abs(total) / np.where(scale > 0, scale, 1.0)
                worst = float(rel.max(initial=0.0))
                worst_compat = max(worst_compat, worst)
                if worst > compat_tol:
                    bad = vs[np.argmax(rel.max(axis=1))]
                    raise PatchIncompatible(
                        f"patch of vertex {bad}: constraint mean {worst:.3e} exceeds {compat_tol:.1e}")
                B_used, g_used = B[:, :-1], g[:, :-1]
            else:
                B_used, g_used = B, g
            sigma, _ = solve_saddle_batched(A, B_used, f, g_used)
            idx = layout.free_start[vs][:, None] + np.arange(n_f)[None, :]
            pieces_v.append(np.repeat(vs, n_f))
            pieces_d.append(layout.free_dofs[idx].ravel())
            pieces_x.append(sigma.reshape(-1, r))
    coeffs = np.zeros((space.dim, r))
    if pieces_v:
        vv = np.concatenate(pieces_v)
        dd = np.concatenate(pieces_d)
        xx = np.concatenate(pieces_x)
        order = np.argsort(vv, kind="stable")  # accumulate in ascending vertex order
        for k in range(r):
            np.add.at(coeffs[:, k], dd[order], xx[order, k])
    defect = divergence_defect(space, coeffs, u, lams)
    if defect > div_tol:
        raise PatchIncompatible(f"divergence identity violated by {defect:.3e}")
    out = coeffs[:, 0] if single else coeffs
    return EquilibratedFlux(space, out, worst_compat, defect)


def patch_system(mesh: TriMesh, vertex: int, u, lam, *, space: RT1Space | None = None):
    """The saddle-point blocks of a single vertex patch.

    Returns
    -------
    system : SaddleSystem
        With the redundant pressure row already removed for interior vertices.
    dofs : ndarray
        Global RT1 ids of the patch unknowns, in system order.
    """
    space = space if space is not None else RT1Space(mesh)
    layout = PatchLayout(space)
    u = np.asarray(u, dtype=float).reshape(mesh.n_vertices, -1)
    grads = np.einsum("tkd,tkr->trd", p1_gradients(mesh), u[mesh.triangles])
    n_t = int(layout.n_tri[vertex])
    n_f = int(layout.n_free[vertex])
    A, B, f, g = _patch_blocks(layout, np.array([vertex]), n_t, n_f, _source(u, lam), grads)
    if not mesh.boundary_vertices[vertex]:
        B, g = B[:, :-1], g[:, :-1]
    dofs = layout.free_dofs[layout.free_start[vertex]:layout.free_start[vertex + 1]]
    return SaddleSystem(A[0], B[0], f[0, :, 0], g[0, :, 0]), dofs
