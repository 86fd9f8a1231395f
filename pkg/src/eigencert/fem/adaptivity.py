"""Adaptive loop: solve, estimate, mark, refine."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_p1
from .estimators import FEMEstimate, dorfler_mark, fem_estimate, local_indicators
from .mesh import TriMesh, prolongation, refine_nvb
from .solve import FEMSolution, fem_solve_cluster

log = logging.getLogger(__name__)


@dataclass
class AdaptiveLevel:
    mesh: TriMesh
    solution: FEMSolution
    estimate: FEMEstimate
    indicators: np.ndarray
    marked: np.ndarray | None = None
    to_next: sp.csr_matrix | None = None  # prolongation onto the next level
    flags: list = field(default_factory=list)


def element_indicators(est: FEMEstimate, sol: FEMSolution) -> tuple[np.ndarray, list]:
    """Case I element indicators, or the raw flux residuals when the gap
    assumptions fail (the constants are then undefined)."""
    if est.constants is None:
        return np.asarray(est.local_res), ["assumptions-failed"]
    eta = local_indicators(est.local_res, est.eta_res_sq, est.constants.c_h,
                           est.constants.c_tilde_h, float(sol.rayleigh[-1]))
    return eta, []


def adaptive_loop(mesh: TriMesh, m: int, M: int, lower_next: float, *, theta: float = 0.6,
                  max_dof: int = 32000, exponent: float = 2.0, max_levels: int = 60,
                  seed: int | None = None, callback=None) -> list[AdaptiveLevel]:
    """Refine ``mesh`` adaptively until the next mesh would exceed ``max_dof`` vertices.

    Each level is solved warm-started from the prolongated eigenvectors of
    the previous one. ``callback(level_index, level)`` is invoked after every
    estimate.
    """
    levels: list[AdaptiveLevel] = []
    x0 = None
    kw = {} if seed is None else {"seed": seed}
    for k in range(max_levels):
        system = assemble_p1(mesh)
        sol = fem_solve_cluster(system, m, M, x0=x0, **kw)
        est = fem_estimate(sol, lower_next, case="I")
        eta, flags = element_indicators(est, sol)
        level = AdaptiveLevel(mesh, sol, est, eta, flags=flags)
        levels.append(level)
        if callback is not None:
            callback(k, level)
        log.info("level %d: %d vertices, eta_res^2 %.4g", k, mesh.n_vertices, est.eta_res_sq)
        marked = dorfler_mark(eta, theta, exponent)
        new = refine_nvb(mesh, marked)
        if new.n_vertices > max_dof:
            break
        P = prolongation(mesh, new)
        level.marked = marked
        level.to_next = P
        x0 = _warm_start(P, system, sol, new)
        mesh = new
    return levels


def _warm_start(P, system, sol: FEMSolution, new: TriMesh) -> np.ndarray:
    nodal = P @ system.extend(sol.lowest)
    return nodal[new.interior_vertices]
