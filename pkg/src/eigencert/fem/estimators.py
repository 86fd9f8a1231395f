"""Flux-based indicators, Case I / II estimators and Dörfler marking."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CaseIIWithoutConstants
from .assembly import p1_gradients
from .flux import EquilibratedFlux
from .mesh import TriMesh


def eta_res_local(mesh: TriMesh, flux: EquilibratedFlux, u) -> tuple[np.ndarray, float]:
    """Elementwise ``sum_i ||grad u_i + sigma_i||_K^2`` and its total.

    Evaluated exactly from element integrals: with constant ``g = grad u``
    on ``K``, ``||g + s||^2 = |g|^2 |K| + 2 g . int s + int |s|^2``.
    """
    space = flux.space
    mass, _, hat_moment = space.element_matrices
    coeffs = np.asarray(flux.coefficients).reshape(space.dim, -1)
    u = np.asarray(u, dtype=float).reshape(mesh.n_vertices, -1)
    grads = np.einsum("tkd,tkr->trd", p1_gradients(mesh), u[mesh.triangles])
    loc = coeffs[space.local_to_global]  # (nt, 8, r)
    means = hat_moment.sum(axis=1)  # int_K phi_i, (nt, 8, 2)
    term_g = np.einsum("trd,trd->t", grads, grads) * mesh.areas
    term_cross = 2.0 * np.einsum("trd,tid,tir->t", grads, means, loc)
    term_s = np.einsum("tir,tij,tjr->t", loc, mass, loc)
    local = np.maximum(term_g + term_cross + term_s, 0.0)
    return local, float(local.sum())


def _require(value, name: str):
    if value is None:
        raise CaseIIWithoutConstants(f"Case II needs {name}")
    return value


def fem_estimators(eta_res_sq: float, c_h: float, c_tilde_h: float, lambda_Mh: float, *,
                   case: str = "I", h: float | None = None, delta: float | None = None,
                   C_I: float | None = None, C_S: float | None = None) -> tuple[float, float]:
    """Guaranteed estimators for the eigenvalue sum and the L2 distance.

    Case I holds on any polygon; Case II assumes elliptic regularity with
    exponent ``delta``, interpolation constant ``C_I`` and stability
    constant ``C_S`` (all user supplied).

    Returns
    -------
    eta_sq, eta_l2 : float
    """
    case = str(case).upper()
    if case == "I":
        eta_sq = (2.0 * c_h ** 2 + 2.0 * lambda_Mh * c_tilde_h ** 4 * eta_res_sq) * eta_res_sq
        eta_l2 = math.sqrt(2.0) * c_tilde_h * math.sqrt(eta_res_sq)
        return eta_sq, eta_l2
    if case == "II":
        delta = _require(delta, "delta")
        C_I = _require(C_I, "C_I")
        C_S = _require(C_S, "C_S")
        h = _require(h, "h")
        factor = c_h * C_I * C_S * h ** delta
        eta_sq = (1.0 + 4.0 * lambda_Mh * factor ** 2) * eta_res_sq
        eta_l2 = math.sqrt(2.0) * factor * math.sqrt(eta_res_sq)
        return eta_sq, eta_l2
    raise ValueError(f"unknown case {case!r}")


def local_indicators(local_res: np.ndarray, eta_res_sq: float, c_h: float,
                     c_tilde_h: float, lambda_Mh: float) -> np.ndarray:
    """Case I element indicators; they sum to the global ``eta_sq``."""
    return (2.0 * c_h ** 2 + 2.0 * lambda_Mh * c_tilde_h ** 4 * eta_res_sq) * np.asarray(local_res)


def dorfler_mark(indicators, theta: float, exponent: float = 2.0) -> np.ndarray:
    """Smallest greedy set with ``sum_marked >= theta**exponent * total``.

    Elements are taken in descending indicator order, ties by index.
    Returns sorted element indices.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    eta = np.asarray(indicators, dtype=float)
    if np.any(eta < 0):
        raise ValueError("indicators must be nonnegative")
    total = eta.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(eta.size), -eta))
    csum = np.cumsum(eta[order])
    target = theta ** exponent * total
    # guard against the cumulative sum landing a rounding error short
    k = int(np.searchsorted(csum, target * (1.0 - 1e-14), side="left")) + 1
    return np.sort(order[:min(k, eta.size)])


def export_indicators(mesh: TriMesh, indicators, path) -> None:
    """Per-element CSV: index, centroid and indicator value."""
    c = mesh.centroids
    eta = np.asarray(indicators, dtype=float)
    lines = ["element,x,y,indicator"]
    lines += [f"{k},{c[k, 0]:.12g},{c[k, 1]:.12g},{eta[k]:.12g}" for k in range(mesh.n_triangles)]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class FEMEstimate:
    verdict: object
    constants: object
    eta_res_sq: float
    local_res: np.ndarray
    eta_sq: float
    eta: float
    eta_l2: float
    flux: EquilibratedFlux | None = None


def fem_estimate(sol, lower_next: float, *, case: str = "I", upper_prev: float | None = None,
                 delta: float | None = None, C_I: float | None = None,
                 C_S: float | None = None, compat_tol: float | None = None) -> FEMEstimate:
    """Flux reconstruction, gap check, constants and estimators for one solve.

    ``upper_prev`` defaults to the discrete eigenvalue just below the
    cluster. When the gap assumptions fail the estimators are NaN and the
    verdict says why; no exception is raised.
    """
    from ..spectral import GapBounds, compute_constants, verify_gap_assumptions
    from .flux import COMPAT_TOL, equilibrate_flux

    case = str(case).upper()
    if case == "II" and None in (delta, C_I, C_S):
        raise CaseIIWithoutConstants("Case II needs delta, C_I and C_S")
    mesh = sol.system.mesh
    if upper_prev is None and sol.m > 1:
        upper_prev = float(sol.values[sol.m - 2])
    gaps = GapBounds(lower_next=float(lower_next), upper_prev=upper_prev)
    verdict = verify_gap_assumptions(sol.values, sol.m, sol.M, gaps)
    u = sol.nodal
    # the Ritz matrix keeps the flux equilibrated for any orthonormal frame of the cluster
    flux = equilibrate_flux(mesh, u, sol.ritz_matrix,
                            compat_tol=COMPAT_TOL if compat_tol is None else compat_tol)
    local, eta_res_sq = eta_res_local(mesh, flux, u)
    if not verdict:
        nan = math.nan
        return FEMEstimate(verdict, None, eta_res_sq, local, nan, nan, nan, flux)
    consts = compute_constants(sol.rayleigh, gaps, m=sol.m)
    lam_M = float(sol.rayleigh[-1])
    eta_sq, eta_l2 = fem_estimators(eta_res_sq, consts.c_h, consts.c_tilde_h, lam_M,
                                    case=case, h=mesh.h, delta=delta, C_I=C_I, C_S=C_S)
    return FEMEstimate(verdict, consts, eta_res_sq, local, eta_sq, math.sqrt(eta_sq), eta_l2, flux)
