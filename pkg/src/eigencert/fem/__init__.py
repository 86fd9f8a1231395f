"""Conforming P1 finite elements for the Dirichlet Laplacian."""
from .adaptivity import AdaptiveLevel, adaptive_loop, element_indicators
from .assembly import P1System, assemble_p1
from .estimators import (FEMEstimate, dorfler_mark, eta_res_local, export_indicators,
                         fem_estimate, fem_estimators, local_indicators)
from .flux import EquilibratedFlux, PatchLayout, equilibrate_flux, patch_system
from .mesh import (TriMesh, mesh_lshape, mesh_square_uniform, prolongation, refine_nvb,
                   refine_uniform)
from .reference import (LSHAPE_EIGENVALUES, AnalyticSquareReference, FineMeshReference,
                        fem_reference_errors, square_cluster)
from .rt1 import RT1Space
from .solve import FEMSolution, fem_solve_cluster

__all__ = [
    "AdaptiveLevel", "adaptive_loop", "element_indicators",
    "P1System", "assemble_p1", "FEMEstimate", "dorfler_mark", "eta_res_local",
    "export_indicators", "fem_estimate", "fem_estimators", "local_indicators",
    "EquilibratedFlux", "PatchLayout", "equilibrate_flux", "patch_system", "TriMesh",
    "mesh_lshape", "mesh_square_uniform", "prolongation", "refine_nvb", "refine_uniform",
    "LSHAPE_EIGENVALUES", "AnalyticSquareReference", "FineMeshReference",
    "fem_reference_errors", "square_cluster", "RT1Space", "FEMSolution", "fem_solve_cluster",
]
