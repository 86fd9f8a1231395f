"""Triangular meshes: structured builders, red and newest-vertex refinement.

Every triangle stores its vertices as ``(v0, v1, v2)`` in counter-clockwise
order with ``(v0, v1)`` as its refinement edge, so ``v2`` is the newest
vertex in the bisection sense.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..errors import ClosureOverflow, DegenerateTriangle

MESH_FORMAT_VERSION = 1
DEFAULT_KAPPA = 10.0
AREA_TOL = 1e-14

# local edge j is opposite local vertex j
_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation of a polygon.

    Parameters
    ----------
    vertices : ndarray, shape (nv, 2)
    triangles : ndarray, shape (nt, 3)
        Counter-clockwise vertex triples, refinement edge first.
    generation : ndarray, shape (nt,), optional
        Number of bisections separating each triangle from its root.
    parents : ndarray, shape (nv, 2), optional
        For vertices created by refinement, the endpoints of the edge they
        bisect; ``-1`` for vertices inherited unchanged. Only meaningful
        relative to the mesh this one was refined from.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    generation: np.ndarray = field(default=None)
    parents: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2 or t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("vertices must be (nv, 2) and triangles (nt, 3)")
        gen = np.zeros(len(t), dtype=np.int64) if self.generation is None else np.asarray(self.generation, dtype=np.int64)
        par = np.full((len(v), 2), -1, dtype=np.int64) if self.parents is None else np.asarray(self.parents, dtype=np.int64)
        for arr in (v, t, gen, par):
            arr.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "generation", gen)
        object.__setattr__(self, "parents", par)

    # sizes -----------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    # geometry ----------------------------------------------------------------
    @cached_property
    def signed_areas(self) -> np.ndarray:
        x = self.vertices[self.triangles]
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def edge_lengths_local(self) -> np.ndarray:
        """Length of local edge j (opposite vertex j), shape (nt, 3)."""
        x = self.vertices[self.triangles]
        return np.linalg.norm(x[:, _LOCAL_EDGES[:, 1]] - x[:, _LOCAL_EDGES[:, 0]], axis=2)

    @property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths_local.max(axis=1)

    @property
    def h(self) -> float:
        """Largest element diameter."""
        return float(self.diameters.max())

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def shape_ratios(self) -> np.ndarray:
        """Diameter over inscribed-circle diameter, per triangle."""
        perim = self.edge_lengths_local.sum(axis=1)
        inradius = 2.0 * self.areas / perim
        return self.diameters / (2.0 * inradius)

    # topology -------------------------------------------------------------
    @cached_property
    def _edge_data(self):
        t = self.triangles
        pairs = np.stack([t[:, _LOCAL_EDGES[:, 0]], t[:, _LOCAL_EDGES[:, 1]]], axis=2).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        tri_edges = inverse.reshape(-1, 3)
        return edges, tri_edges, counts

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as (low, high) vertex index pairs."""
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Global edge id of local edge j (opposite vertex j), shape (nt, 3)."""
        return self._edge_data[1]

    @property
    def edge_triangle_counts(self) -> np.ndarray:
        return self._edge_data[2]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_triangle_counts == 1

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.edges[self.boundary_edges].ravel()] = True
        flags.flags.writeable = False
        return flags

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertices)

    # checks ---------------------------------------------------------------
    def check_conforming(self) -> bool:
        """Edge multiplicities at most 2 and Euler characteristic 1.

        A hanging node adds one vertex and two edges without adding a
        triangle, so it lowers ``V - E + T`` below 1 on a simply connected
        domain.
        """
        if np.any(self.edge_triangle_counts > 2):
            return False
        if np.any(self.signed_areas <= 0):
            return False
        return self.n_vertices - self.n_edges + self.n_triangles == 1

    def check_areas(self, tol: float = AREA_TOL) -> None:
        bad = np.flatnonzero(self.signed_areas < tol)
        if bad.size:
            raise DegenerateTriangle(f"{bad.size} triangles with area below {tol} (first: {bad[0]})")

    def check_shape(self, kappa: float = DEFAULT_KAPPA) -> float:
        """Largest shape ratio; raises ``ValueError`` if it exceeds ``kappa``."""
        worst = float(self.shape_ratios().max())
        if worst > kappa:
            raise ValueError(f"shape ratio {worst:.3f} exceeds kappa={kappa}")
        return worst

    def vertex_triangles(self) -> sp.csr_matrix:
        """Vertex-to-triangle incidence as a sparse boolean matrix."""
        nt = self.n_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(nt), 3)
        return sp.csr_matrix((np.ones(3 * nt, dtype=bool), (rows, cols)), shape=(self.n_vertices, nt))

    def angle_sum(self, vertex: int) -> float:
        """Sum of the interior angles of all triangles meeting at ``vertex``."""
        total = 0.0
        for tri in self.triangles[np.any(self.triangles == vertex, axis=1)]:
            k = int(np.flatnonzero(tri == vertex)[0])
            p = self.vertices[tri[k]]
            a = self.vertices[tri[(k + 1) % 3]] - p
            b = self.vertices[tri[(k + 2) % 3]] - p
            total += np.arccos(np.clip(a @ b / np.linalg.norm(a) / np.linalg.norm(b), -1, 1))
        return total

    def export(self, path) -> None:
        """Write the plain-text mesh format.

        Layout: a version comment, then ``vertices nE nV`` (element and
        vertex counts), ``nV`` coordinate lines, ``nE`` triangle lines
        (0-based, refinement edge first) and ``nV`` boundary flags.
        """
        lines = [f"# eigencert mesh format {MESH_FORMAT_VERSION}",
                 f"vertices {self.n_triangles} {self.n_vertices}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        lines += [f"{a} {b} {c}" for a, b, c in self.triangles]
        lines += [str(int(f)) for f in self.boundary_vertices]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "TriMesh":
        rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        head = rows[0].split()
        if head[0] != "vertices":
            raise ValueError("missing 'vertices nE nV' header")
        ne, nv = int(head[1]), int(head[2])
        verts = np.array([[float(s) for s in r.split()] for r in rows[1:1 + nv]])
        tris = np.array([[int(s) for s in r.split()] for r in rows[1 + nv:1 + nv + ne]], dtype=np.int64)
        return cls(verts.reshape(-1, 2), tris.reshape(-1, 3))

    def same_as(self, other: "TriMesh", tol: float = 1e-12) -> bool:
        """Geometric equality: same vertex set and same triangles, any numbering."""
        if self.n_vertices != other.n_vertices or self.n_triangles != other.n_triangles:
            return False
        key = lambda v: np.lexsort((np.round(v[:, 1] / tol), np.round(v[:, 0] / tol)))
        a, b = key(self.vertices), key(other.vertices)
        if not np.allclose(self.vertices[a], other.vertices[b], atol=tol):
            return False
        # relabel other's vertices into self's numbering
        relabel = np.empty(other.n_vertices, dtype=np.int64)
        relabel[b] = a
        mine = {tuple(sorted(t)) for t in self.triangles.tolist()}
        theirs = {tuple(sorted(t)) for t in relabel[other.triangles].tolist()}
        return mine == theirs


# builders -------------------------------------------------------------------

def _grid_mesh(x0: float, y0: float, nx: int, ny: int, spacing: float, keep=None) -> TriMesh:
    """Cells of a rectangular grid, each split along its (a, c) diagonal."""
    xs = x0 + spacing * np.arange(nx + 1)
    ys = y0 + spacing * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.c_[X.ravel(), Y.ravel()]
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    if keep is not None:
        cx = x0 + spacing * (i + 0.5)
        cy = y0 + spacing * (j + 0.5)
        mask = keep(cx, cy)
        i, j = i[mask], j[mask]
    a = j * (nx + 1) + i
    b = a + 1
    c = a + nx + 2
    d = a + nx + 1
    # hypotenuse a-c is the refinement edge of both halves
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = np.c_[c, a, b]
    tris[1::2] = np.c_[a, c, d]
    used = np.unique(tris)
    if used.size < len(verts):
        remap = np.full(len(verts), -1, dtype=np.int64)
        remap[used] = np.arange(used.size)
        verts, tris = verts[used], remap[tris]
    return TriMesh(verts, tris)


def mesh_square_uniform(n: int) -> TriMesh:
    """Structured mesh of the unit square with ``n`` cells per side.

    Each cell is split by the diagonal from its lower-left to its
    upper-right corner, giving ``2 n^2`` isosceles right triangles.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    return _grid_mesh(0.0, 0.0, n, n, 1.0 / n)


def mesh_lshape(n: int) -> TriMesh:
    """Structured mesh of (-1, 1)^2 minus [0, 1] x [-1, 0].

    ``n`` is the number of cells per side of each of the three unit
    squares, so the mesh has ``6 n^2`` triangles.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    keep = lambda cx, cy: ~((cx > 0) & (cy < 0))
    return _grid_mesh(-1.0, -1.0, 2 * n, 2 * n, 1.0 / n, keep=keep)


# refinement -----------------------------------------------------------------

def _midpoints(mesh: TriMesh, edge_ids: np.ndarray):
    """New vertex array with midpoints appended for ``edge_ids``.

    Returns the vertices, the parent table and a map edge id -> new vertex.
    """
    nv = mesh.n_vertices
    ends = mesh.edges[edge_ids]
    mids = 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])
    edge_to_vertex = np.full(mesh.n_edges, -1, dtype=np.int64)
    edge_to_vertex[edge_ids] = nv + np.arange(len(edge_ids))
    parents = np.vstack([np.full((nv, 2), -1, dtype=np.int64), ends])
    return np.vstack([mesh.vertices, mids]), parents, edge_to_vertex


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Red refinement: every triangle into four similar children.

    Children inherit refinement edges parallel to the parent's, so a
    structured mesh with ``n`` cells per side maps onto the one with ``2n``.
    """
    verts, parents, e2v = _midpoints(mesh, np.arange(mesh.n_edges))
    t = mesh.triangles
    mid = e2v[mesh.triangle_edges]  # column j: midpoint opposite vertex j
    v0, v1, v2 = t.T
    m12, m20, m01 = mid.T
    kids = np.stack([
        np.c_[v0, m01, m20],
        np.c_[m01, v1, m12],
        np.c_[m20, m12, v2],
        np.c_[m12, m20, m01],
    ], axis=1).reshape(-1, 3)
    gen = np.repeat(mesh.generation + 2, 4)
    return TriMesh(verts, kids, gen, parents)


def nvb_closure(mesh: TriMesh, marked) -> np.ndarray:
    """Edges to bisect so that refining ``marked`` leaves no hanging node.

    Returns a boolean edge mask. Every triangle with a marked edge must
    also have its refinement edge marked; this is iterated to a fixed point.
    """
    marked = np.asarray(marked, dtype=np.int64).ravel()
    te = mesh.triangle_edges
    flags = np.zeros(mesh.n_edges, dtype=bool)
    flags[te[marked, 2]] = True
    limit = 10 * mesh.n_triangles + 10
    for _ in range(limit):
        hit = flags[te].any(axis=1)
        need = te[hit, 2]
        if flags[need].all():
            return flags
        flags[need] = True
    raise ClosureOverflow(f"closure did not settle within {limit} sweeps")


def refine_nvb(mesh: TriMesh, marked) -> TriMesh:
    """Newest-vertex bisection of ``marked`` triangles plus closure."""
    marked = np.asarray(marked, dtype=np.int64).ravel()
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_triangles):
        raise ValueError("marked triangle index out of range")
    if marked.size == 0:
        return TriMesh(mesh.vertices, mesh.triangles, mesh.generation)
    flags = nvb_closure(mesh, marked)
    verts, parents, e2v = _midpoints(mesh, np.flatnonzero(flags))
    t = mesh.triangles
    te = mesh.triangle_edges
    mid = e2v[te]
    split = flags[te]  # (nt, 3), split[:, 2] is the refinement edge
    gen = mesh.generation
    v0, v1, v2 = t.T
    out, out_gen = [t[~split[:, 2]]], [gen[~split[:, 2]]]

    def emit(mask, tris, g):
        out.append(tris[mask])
        out_gen.append(g[mask])

    bis = split[:, 2]
    m = mid[:, 2]
    # child A = (v2, v0, m) with refinement edge (v2, v0) = local edge 1
    # child B = (v1, v2, m) with refinement edge (v1, v2) = local edge 0
    a_split = bis & split[:, 1]
    b_split = bis & split[:, 0]
    ma, mb = mid[:, 1], mid[:, 0]
    g1 = gen + 1
    g2 = gen + 2
    emit(bis & ~a_split, np.c_[v2, v0, m], g1)
    emit(a_split, np.c_[m, v2, ma], g2)
    emit(a_split, np.c_[v0, m, ma], g2)
    emit(bis & ~b_split, np.c_[v1, v2, m], g1)
    emit(b_split, np.c_[m, v1, mb], g2)
    emit(b_split, np.c_[v2, m, mb], g2)
    return TriMesh(verts, np.vstack(out), np.concatenate(out_gen), parents)


def prolongation(coarse: TriMesh, fine: TriMesh) -> sp.csr_matrix:
    """Nodal interpolation from ``coarse`` onto the refined mesh ``fine``.

    Uses ``fine.parents``: inherited vertices keep their value, new
    vertices average the two endpoints of the edge they bisect.
    """
    nc, nf = coarse.n_vertices, fine.n_vertices
    par = fine.parents
    rows = np.arange(nc)
    data = [np.ones(nc)]
    r = [rows]
    c = [rows]
    new = np.arange(nc, nf)
    if np.any(par[new] < 0) or np.any(par[new] >= nc):
        raise ValueError("fine mesh is not a one-step refinement of coarse")
    r += [new, new]
    c += [par[new, 0], par[new, 1]]
    data += [np.full(new.size, 0.5), np.full(new.size, 0.5)]
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(r), np.concatenate(c))), shape=(nf, nc))
