"""Discrete eigenpairs of the P1 pencil."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from ..errors import DimensionMismatch, NoConvergence
from ..linalg import DEFAULT_SEED, DENSE_SOLVE_LIMIT, dense_eig, partial_eig
from ..spectral import EigenCluster, SubspaceBasis
from .assembly import P1System

RAYLEIGH_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FEMSolution:
    """Cluster ``m..M`` of a P1 eigenproblem.

    Attributes
    ----------
    system : P1System
    m, M : int
    values : ndarray
        All computed discrete eigenvalues (at least ``M + 1`` when available).
    cluster : EigenCluster
        Rayleigh quotients of the cluster vectors.
    frame : SubspaceBasis
        Mass-orthonormal interior-dof vectors, one column per cluster member.
    lowest : ndarray
        All computed eigenvectors (interior dofs), used to warm-start finer
        levels.
    """

    system: P1System
    m: int
    M: int
    values: np.ndarray
    cluster: EigenCluster
    frame: SubspaceBasis
    lowest: np.ndarray

    @property
    def rayleigh(self) -> np.ndarray:
        return np.asarray(self.cluster.values)

    @property
    def nodal(self) -> np.ndarray:
        """Cluster vectors on all vertices (zero on the boundary), (nv, J)."""
        return self.system.extend(self.frame.vectors)

    @property
    def ritz_matrix(self) -> np.ndarray:
        """``X^T K X`` of the cluster frame; diagonal up to rounding unless remixed."""
        X = self.frame.vectors
        H = X.T @ (self.system.stiffness @ X)
        return 0.5 * (H + H.T)

    def rotated(self, U: np.ndarray) -> "FEMSolution":
        """Same solution with the cluster frame remixed by orthogonal ``U``."""
        return FEMSolution(self.system, self.m, self.M, self.values, self.cluster,
                           self.frame.rotated(U), self.lowest)


def _weighted_residuals(K, Mm, X, w):
    R = K @ X - (Mm @ X) * w
    return np.sqrt(np.sum(R ** 2 / Mm.diagonal()[:, None], axis=0))


def _polish(K, Mm, lu, X, steps: int = 2):
    # subspace iteration with the exact inverse: drives residuals to roundoff
    for _ in range(steps):
        Y = lu.solve(np.asfortranarray(Mm @ X))
        G = Y.T @ (Mm @ Y)
        L = np.linalg.cholesky(0.5 * (G + G.T))
        Y = np.linalg.solve(L, Y.T).T
        H = Y.T @ (K @ Y)
        w, Z = np.linalg.eigh(0.5 * (H + H.T))
        X = Y @ Z
    return w, X


def fem_solve_cluster(system: P1System, m: int, M: int, *, extra: int = 1,
                      x0: np.ndarray | None = None, tol: float = 1e-11,
                      seed: int = DEFAULT_SEED, dense_limit: int = DENSE_SOLVE_LIMIT,
                      maxiter: int = 500, stage_tol: float = 1e-8,
                      max_polish: int = 8) -> FEMSolution:
    """Eigenpairs ``m..M`` (1-based, ascending) of the P1 pencil.

    Small systems are solved densely. Larger ones use block LOBPCG
    preconditioned by a sparse LU factorisation of the stiffness matrix,
    to the looser ``stage_tol``, then subspace iteration with the same
    factors until the mass-weighted relative residuals reach ``tol`` (at
    most ``max_polish`` steps). LOBPCG alone tends to stall near 1e-7 on
    strongly graded meshes, while the exact-inverse steps do not.

    Parameters
    ----------
    extra : int
        Number of eigenvalues above ``M`` also computed (for gap checks).
    x0 : ndarray, optional
        Warm start, e.g. coarse eigenvectors prolongated to this mesh.
    """
    n = system.n_interior
    if not 1 <= m <= M:
        raise ValueError("need 1 <= m <= M")
    if M >= n:
        raise DimensionMismatch(f"cluster end {M} needs more than {n} interior dofs")
    K, Mm = system.stiffness, system.mass
    want = min(M + extra, n)
    if n <= dense_limit:
        w, X = dense_eig(K.toarray(), Mm.toarray(), select=slice(0, want))
        w = np.asarray(w[:want])
    else:
        lu = spla.splu(K.tocsc())
        bs = want + max(4, want // 2)
        w, X, _ = partial_eig(lambda V: K @ V, n, want, apply_B=lambda V: Mm @ V,
                              precond=lambda R, th: lu.solve(np.asfortranarray(R)),
                              tol=max(tol, stage_tol), seed=seed, x0=x0, maxiter=maxiter,
                              residual_weight=1.0 / Mm.diagonal(), block=bs)
        X = X[:, :want]
        for _ in range(max_polish):
            w, X = _polish(K, Mm, lu, X, steps=1)
            # only the cluster columns need full accuracy
            if np.all(_weighted_residuals(K, Mm, X[:, :M], w[:M]) <= tol * np.abs(w[:M])):
                break
    U = X[:, m - 1:M]
    KU, MU = K @ U, Mm @ U
    # Rayleigh-Ritz on the cluster span fixes orthonormality and values
    G = U.T @ MU
    L = np.linalg.cholesky(0.5 * (G + G.T))
    U = np.linalg.solve(L, U.T).T
    KU, MU = K @ U, Mm @ U
    H = U.T @ KU
    mu, Z = np.linalg.eigh(0.5 * (H + H.T))
    U, KU, MU = U @ Z, KU @ Z, MU @ Z
    num = np.einsum("ij,ij->j", U, KU)
    den = np.einsum("ij,ij->j", U, MU)
    rq = num / den
    if np.any(np.abs(rq - mu) > RAYLEIGH_TOL * np.abs(mu)):
        raise NoConvergence("Rayleigh identity violated for a cluster vector")
    cluster = EigenCluster(m, M, rq)
    frame = SubspaceBasis(U, metric=Mm)
    return FEMSolution(system, m, M, w, cluster, frame, X)
