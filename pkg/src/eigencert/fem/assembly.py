"""Conforming P1 stiffness and mass matrices with Dirichlet elimination."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, AREA_TOL

_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def p1_gradients(mesh: TriMesh) -> np.ndarray:
    """Gradients of the three barycentric functions per triangle, (nt, 3, 2)."""
    x = mesh.vertices[mesh.triangles]
    area2 = 2.0 * mesh.signed_areas
    # grad lambda_j = rot90(edge opposite j) / (2|K|)
    e = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    return np.stack([-e[..., 1], e[..., 0]], axis=-1) / area2[:, None, None]


def element_stiffness(mesh: TriMesh) -> np.ndarray:
    """Local stiffness matrices, (nt, 3, 3)."""
    g = p1_gradients(mesh)
    return mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", g, g)


def element_mass(mesh: TriMesh) -> np.ndarray:
    return mesh.areas[:, None, None] * _MASS_REF


def _assemble(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class P1System:
    """Dirichlet Laplacian discretised by continuous piecewise linears.

    Attributes
    ----------
    mesh : TriMesh
    stiffness, mass : csr_matrix
        Restricted to interior vertices.
    stiffness_full, mass_full : csr_matrix
        Before elimination (all vertices).
    dofs : ndarray
        Interior vertex index of each matrix row.
    """

    mesh: TriMesh
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    stiffness_full: sp.csr_matrix
    mass_full: sp.csr_matrix
    dofs: np.ndarray

    @property
    def ndof(self) -> int:
        """Total vertex count, the convention used in reported tables."""
        return self.mesh.n_vertices

    @property
    def n_interior(self) -> int:
        return len(self.dofs)

    def extend(self, values: np.ndarray) -> np.ndarray:
        """Extend interior values (n_interior, ...) by zero to all vertices."""
        values = np.asarray(values)
        out = np.zeros((self.mesh.n_vertices,) + values.shape[1:], dtype=values.dtype)
        out[self.dofs] = values
        return out


def assemble_p1(mesh: TriMesh) -> P1System:
    """Assemble the P1 eigenvalue pencil on ``mesh``.

    Raises
    ------
    DegenerateTriangle
        If any triangle has area below ``1e-14``.
    """
    mesh.check_areas(AREA_TOL)
    K = _assemble(mesh, element_stiffness(mesh))
    M = _assemble(mesh, element_mass(mesh))
    dofs = mesh.interior_vertices
    return P1System(mesh, K[dofs][:, dofs].tocsr(), M[dofs][:, dofs].tocsr(), K, M, dofs)
