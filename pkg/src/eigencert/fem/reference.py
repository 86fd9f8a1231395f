"""Reference errors for P1 clusters: analytic square modes or a finer mesh."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ClusterMismatch, DimensionMismatch
from ..spectral import OverlapMatrix, check_cluster_match, dm_energy_distance, frame_distances
from .mesh import TriMesh
from .quadrature import triangle_rule
from .solve import FEMSolution

OVERLAP_DEGREE = 10
CHUNK = 20000

# Dirichlet eigenvalues of the L-shaped domain (-1,1)^2 minus [0,1]x[-1,0]
LSHAPE_EIGENVALUES = (9.6397238, 15.197252, 19.739209, 29.521481, 31.912636, 41.474510)


def square_modes(count: int) -> list[tuple[float, int, int]]:
    """Lowest ``count`` Dirichlet modes of the unit square as (value, k, l).

    Sorted by value, ties by ``k``.
    """
    kmax = int(math.ceil(math.sqrt(count))) + 2
    while True:
        modes = sorted((math.pi ** 2 * (k * k + l * l), k, l)
                       for k in range(1, kmax + 1) for l in range(1, kmax + 1))
        # every mode below the count-th value must be inside the search box
        if math.pi ** 2 * (kmax + 1) ** 2 > modes[count][0]:
            return modes[:count + 1][:count]
        kmax *= 2


def square_cluster(m: int, M: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Exact values and mode numbers of cluster ``m..M`` on the unit square.

    Raises
    ------
    ClusterMismatch
        If the cluster boundary splits a degenerate eigenvalue.
    """
    modes = square_modes(M + 1)
    vals = np.array([v for v, _, _ in modes])
    tol = 1e-9 * vals[-1]
    if m > 1 and abs(vals[m - 1] - vals[m - 2]) < tol:
        raise ClusterMismatch(f"cluster start {m} splits a degenerate eigenvalue")
    if abs(vals[M] - vals[M - 1]) < tol:
        raise ClusterMismatch(f"cluster end {M} splits a degenerate eigenvalue")
    sel = modes[m - 1:M]
    return np.array([v for v, _, _ in sel]), [(k, l) for _, k, l in sel]


def _square_mode_values(pts: np.ndarray, modes) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([2.0 * np.sin(k * math.pi * x) * np.sin(l * math.pi * y)
                     for k, l in modes], axis=-1)


def analytic_overlaps(mesh: TriMesh, nodal: np.ndarray, modes, degree: int = OVERLAP_DEGREE) -> np.ndarray:
    """``(u_i, u_jh)`` for L2-normalised square modes against P1 fields."""
    bary, w = triangle_rule(degree)
    nodal = np.asarray(nodal).reshape(mesh.n_vertices, -1)
    out = np.zeros((len(modes), nodal.shape[1]))
    for start in range(0, mesh.n_triangles, CHUNK):
        tri = mesh.triangles[start:start + CHUNK]
        x = mesh.vertices[tri]
        pts = np.einsum("qk,tkd->tqd", bary, x)
        exact = _square_mode_values(pts, modes)  # (t, q, J)
        approx = np.einsum("qk,tkr->tqr", bary, nodal[tri])
        wa = mesh.areas[start:start + CHUNK, None] * w[None, :]
        out += np.einsum("tq,tqi,tqr->ir", wa, exact, approx)
    return out


def analytic_projection_defect(mesh: TriMesh, nodal: np.ndarray, modes, overlaps: np.ndarray,
                               degree: int = OVERLAP_DEGREE) -> float:
    """``sum_j ||u_jh - sum_i (u_i, u_jh) u_i||^2`` by quadrature.

    Equal to ``J - ||M||_F^2`` for orthonormal frames, but summed from
    small nonnegative terms, so it keeps full relative accuracy when the
    frames are close.
    """
    bary, w = triangle_rule(degree)
    nodal = np.asarray(nodal).reshape(mesh.n_vertices, -1)
    total = 0.0
    for start in range(0, mesh.n_triangles, CHUNK):
        tri = mesh.triangles[start:start + CHUNK]
        pts = np.einsum("qk,tkd->tqd", bary, mesh.vertices[tri])
        exact = _square_mode_values(pts, modes)
        approx = np.einsum("qk,tkr->tqr", bary, nodal[tri])
        r = approx - np.einsum("tqi,ir->tqr", exact, overlaps)
        wa = mesh.areas[start:start + CHUNK, None] * w[None, :]
        total += float(np.einsum("tq,tqr->", wa, r * r))
    return total


@dataclass
class AnalyticSquareReference:
    """Exact Dirichlet modes of the unit square."""
    degree: int = OVERLAP_DEGREE

    def errors(self, sol: FEMSolution) -> tuple[float, float, float]:
        exact, modes = square_cluster(sol.m, sol.M)
        mesh = sol.system.mesh
        M_ov = OverlapMatrix(analytic_overlaps(mesh, sol.nodal, modes, self.degree))
        check_cluster_match(M_ov)
        err_lambda = float(np.sum(sol.rayleigh) - np.sum(exact))
        err_h1 = dm_energy_distance(exact, sol.rayleigh, M_ov)
        # 2 (J - ||M||^2) cancels badly when the error is small
        defect = analytic_projection_defect(mesh, sol.nodal, modes, M_ov.entries, self.degree)
        err_l2 = math.sqrt(2.0 * defect)
        return err_lambda, err_h1, err_l2


@dataclass
class FineMeshReference:
    """A solve on a uniformly refined mesh, plus optional exact eigenvalues.

    ``prolongators`` maps the id of each coarser mesh to the sparse nodal
    interpolation onto ``solution.system.mesh`` together with the number of
    uniform levels separating them.
    """
    solution: FEMSolution
    prolongators: dict = field(default_factory=dict)
    exact_values: np.ndarray | None = None
    min_levels: int = 2

    def register(self, mesh: TriMesh, P: sp.spmatrix, levels: int) -> None:
        self.prolongators[id(mesh)] = (mesh, P.tocsr(), levels)

    def levels_above(self, mesh: TriMesh) -> int:
        entry = self.prolongators.get(id(mesh))
        return -1 if entry is None else entry[2]

    def errors(self, sol: FEMSolution) -> tuple[float, float, float]:
        ref = self.solution
        if (sol.m, sol.M) != (ref.m, ref.M):
            raise DimensionMismatch("reference describes a different cluster")
        exact_sum = (float(np.sum(self.exact_values)) if self.exact_values is not None
                     else float(np.sum(ref.rayleigh)))
        err_lambda = float(np.sum(sol.rayleigh) - exact_sum)
        mesh = sol.system.mesh
        if mesh is ref.system.mesh:
            fine_nodal = sol.nodal
        else:
            entry = self.prolongators.get(id(mesh))
            if entry is None or entry[0] is not mesh:
                raise DimensionMismatch("mesh is not registered with this reference")
            fine_nodal = entry[1] @ sol.nodal
        rs = ref.system
        approx = fine_nodal[rs.dofs]
        M_ov = OverlapMatrix(ref.frame.vectors.T @ (rs.mass @ approx))
        check_cluster_match(M_ov)
        err_l2, err_h1 = frame_distances(ref.frame.vectors, ref.rayleigh, approx,
                                         lambda V: rs.stiffness @ V, metric=rs.mass)
        return err_lambda, err_h1, err_l2


def fem_reference_errors(sol: FEMSolution, reference) -> tuple[float, float, float]:
    """(Err_lambda, Err_H1, Err_L2) of ``sol`` against ``reference``."""
    return reference.errors(sol)
