"""Density-matrix bookkeeping for eigenvalue clusters.

Everything here is independent of the discretization: a cluster of
eigenvalues with indices ``m..M``, orthonormal frames of coefficient
vectors, the overlap matrix between an exact and an approximate frame and
the distances between the corresponding orthogonal projectors (density
matrices), plus the computable gap constants that turn a residual norm into
a guaranteed error bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (ClusterMismatch, DimensionMismatch, GapViolation, NegativeRadicand,
                     RankDeficientOverlap)
from .linalg import svd_small

ORTHONORMALITY_TOL = 1e-10
SYMMETRY_TOL = 1e-9
RADICAND_TOL = 1e-12
NOISE_FLOOR = 1e-14


@dataclass(frozen=True)
class EigenCluster:
    """Eigenvalues ``values`` with 1-based indices ``m..M``."""
    m: int
    M: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.m < 1 or self.M < self.m:
            raise ValueError(f"invalid cluster indices m={self.m}, M={self.M}")
        if vals.shape != (self.M - self.m + 1,):
            raise DimensionMismatch(f"cluster {self.m}..{self.M} needs {self.J} values, "
                                    f"got {vals.shape}")
        if np.any(np.diff(vals) < 0):
            raise ValueError("cluster values must be ascending")
        if np.any(vals <= 0):
            raise ValueError("cluster values must be positive")

    @property
    def J(self) -> int:
        return self.M - self.m + 1

    @property
    def indices(self) -> slice:
        """Zero-based slice selecting the cluster from a full spectrum."""
        return slice(self.m - 1, self.M)


def _metric_apply(metric) -> Callable[[np.ndarray], np.ndarray]:
    if metric is None:
        return lambda X: X
    if callable(metric):
        return metric
    return lambda X: metric @ X


@dataclass
class SubspaceBasis:
    """Orthonormal frame stored as the columns of ``vectors``.

    ``metric`` is the Gram operator of the ambient basis (a matrix, sparse
    matrix or callable); ``None`` means the ambient basis is orthonormal.
    """
    vectors: np.ndarray
    metric: object = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        V = np.asarray(self.vectors)
        if V.ndim == 1:
            V = V[:, None]
        self.vectors = V
        if self.check:
            G = self.gram()
            err = np.max(np.abs(G - np.eye(self.J))) if self.J else 0.0
            if err > ORTHONORMALITY_TOL:
                raise ValueError(f"frame is not orthonormal (Gram error {err:.2e})")

    @property
    def ambient_dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def J(self) -> int:
        return self.vectors.shape[1]

    def weighted(self) -> np.ndarray:
        """Metric applied to the vectors."""
        return _metric_apply(self.metric)(self.vectors)

    def gram(self) -> np.ndarray:
        return self.vectors.conj().T @ self.weighted()

    def rotated(self, U: np.ndarray) -> "SubspaceBasis":
        return SubspaceBasis(self.vectors @ U, self.metric, check=False)


@dataclass(frozen=True)
class OverlapMatrix:
    """``entries[i, j] = (u_i, v_j)`` between two orthonormal frames."""
    entries: np.ndarray

    @property
    def J(self) -> int:
        return self.entries.shape[0]

    def singular_values(self) -> np.ndarray:
        return svd_small(self.entries)[1]


@dataclass(frozen=True)
class GapBounds:
    """Bounds on the spectrum next to a cluster.

    ``upper_prev`` bounds the eigenvalue below the cluster from above (absent
    for ``m = 1``), ``lower_next`` bounds the one above from below, and
    ``lower_first`` bounds the lowest eigenvalue from below.
    """
    lower_next: float
    upper_prev: float | None = None
    lower_first: float | None = None


@dataclass(frozen=True)
class GapVerdict:
    ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class ClusterConstants:
    """Gap constants ``c_h``, ``c_tilde_h`` and ``c_bar_h``.

    ``c_bar_h`` is NaN when no lower bound for the first eigenvalue was given.
    """
    c_h: float
    c_tilde_h: float
    c_bar_h: float


@dataclass
class ErrorReport:
    """One row of a convergence table."""
    ndof: int
    h_or_N: float
    err_lambda: float = math.nan
    err_h1: float = math.nan
    err_l2: float = math.nan
    eta_sq: float = math.nan
    eta: float = math.nan
    eta_l2: float = math.nan
    ieff_lambda: float | str = math.nan
    ieff_h1: float | str = math.nan
    ieff_l2: float | str = math.nan
    flags: list = field(default_factory=list)
    level: float | None = None  # ladder parameter (mesh level n or cutoff N)

    def fill_effectivity(self) -> "ErrorReport":
        self.ieff_lambda = effectivity(self.eta_sq, self.err_lambda)
        self.ieff_h1 = effectivity(self.eta, self.err_h1)
        self.ieff_l2 = effectivity(self.eta_l2, self.err_l2)
        return self


def effectivity(estimate: float, error: float) -> float | str:
    """Ratio estimate/error, or ``"n/a"`` when the error is at noise level."""
    if error is None or not np.isfinite(error) or not np.isfinite(estimate):
        return math.nan
    if abs(error) < NOISE_FLOOR:
        return "n/a"
    return estimate / error


def verify_gap_assumptions(lambda_h_all, m: int, M: int, gaps: GapBounds) -> GapVerdict:
    """Check the discrete/continuous gap inequalities around cluster ``m..M``.

    Parameters
    ----------
    lambda_h_all : array_like
        Ascending discrete eigenvalues; needs at least ``M`` entries. For
        ``m > 1`` a missing ``gaps.upper_prev`` is taken as ``lambda_(m-1)h``.
    m, M : int
        1-based cluster indices.
    gaps : GapBounds

    Returns
    -------
    GapVerdict
        ``ok`` or the first failing inequality. Never raises.
    """
    lam = np.asarray(lambda_h_all, dtype=float)
    if lam.shape[0] < M:
        return GapVerdict(False, f"only {lam.shape[0]} discrete eigenvalues, need {M}")
    lam_m, lam_M = lam[m - 1], lam[M - 1]
    if m > 1:
        # conforming discrete values bound the exact ones from above
        upper_prev = lam[m - 2] if gaps.upper_prev is None else gaps.upper_prev
        if not upper_prev < lam_m:
            return GapVerdict(False, f"upper_prev {upper_prev:.6g} >= lambda_mh {lam_m:.6g}")
    if not lam_M < gaps.lower_next:
        return GapVerdict(False, f"lambda_Mh {lam_M:.6g} >= lower_next {gaps.lower_next:.6g}")
    if lam.shape[0] > M and not gaps.lower_next <= lam[M]:
        return GapVerdict(False, f"lower_next {gaps.lower_next:.6g} exceeds "
                                 f"lambda_(M+1)h {lam[M]:.6g}")
    return GapVerdict(True)


def compute_constants(lambda_h_cluster, gaps: GapBounds, m: int | None = None) -> ClusterConstants:
    """Gap constants of a cluster from its discrete values and the gap bounds.

    ``m`` defaults to 1 when ``gaps.upper_prev`` is absent, otherwise to 2;
    only ``m == 1`` versus ``m > 1`` matters.

    Raises
    ------
    GapViolation
        When a relative gap is not positive.
    """
    lam = np.asarray(lambda_h_cluster, dtype=float)
    first_cluster = (gaps.upper_prev is None) if m is None else (m == 1)
    lam_m, lam_M = lam[0], lam[-1]
    rel_next = 1.0 - lam_M / gaps.lower_next
    if not rel_next > 0.0:
        raise GapViolation(f"lambda_Mh={lam_M} not below lower_next={gaps.lower_next}")
    c_h = 1.0 / rel_next
    c_tilde = gaps.lower_next ** -0.5 / rel_next
    if not first_cluster:
        if gaps.upper_prev is None:
            raise GapViolation("upper_prev required for m > 1")
        rel_prev = lam_m / gaps.upper_prev - 1.0
        if not rel_prev > 0.0:
            raise GapViolation(f"lambda_mh={lam_m} not above upper_prev={gaps.upper_prev}")
        c_h = max(1.0 / rel_prev, c_h)
        c_tilde = max(gaps.upper_prev ** -0.5 / rel_prev, c_tilde)
    if gaps.lower_first is None:
        c_bar = math.nan
    else:
        c_bar = max((lam_M / gaps.lower_first - 1.0) ** 2, 1.0)
    return ClusterConstants(c_h, c_tilde, c_bar)


def overlap(phi_a: SubspaceBasis, phi_b: SubspaceBasis) -> OverlapMatrix:
    """Matrix of metric inner products ``(a_i, b_j)``."""
    if phi_a.ambient_dim != phi_b.ambient_dim:
        raise DimensionMismatch(f"ambient dimensions {phi_a.ambient_dim} and "
                                f"{phi_b.ambient_dim} differ")
    return OverlapMatrix(phi_a.vectors.conj().T @ phi_b.weighted())


def align_subspaces(phi_h: SubspaceBasis, phi_exact: SubspaceBasis):
    """Rotate ``phi_h`` onto ``phi_exact`` as closely as possible.

    Solves the orthogonal (unitary for complex frames) Procrustes problem
    through the polar factor of the overlap matrix.

    Returns
    -------
    U : ndarray
        J x J orthogonal/unitary matrix.
    aligned : SubspaceBasis
        ``phi_h`` with vectors ``phi_h.vectors @ U``.

    Raises
    ------
    RankDeficientOverlap
        When the overlap has a singular value below 1e-12.
    """
    if phi_h.J != phi_exact.J:
        raise DimensionMismatch("frames have different sizes")
    # K[i, j] = (u_ih, u_j); minimise ||Phi_h U - Phi||  =>  U = polar(K)
    K = overlap(phi_h, phi_exact).entries
    P, s, Q = svd_small(K)
    if s[-1] < 1e-12:
        raise RankDeficientOverlap(f"smallest overlap singular value {s[-1]:.2e}")
    U = P @ Q.conj().T
    return U, phi_h.rotated(U)


def dm_l2_distance(M: OverlapMatrix) -> float:
    """Hilbert-Schmidt distance between the two projectors of an overlap."""
    J = M.J
    rad = 2.0 * (J - np.sum(np.abs(M.entries) ** 2))
    return _safe_sqrt(rad)


def dm_energy_distance(lambda_exact, lambda_h, M: OverlapMatrix) -> float:
    """Energy-weighted projector distance for a conforming approximation.

    ``lambda_h`` are the Rayleigh quotients of the approximate vectors, and
    ``M[i, j] = (u_i, u_jh)`` with ``u_i`` exact.
    """
    lam = np.asarray(lambda_exact, dtype=float)
    lam_h = np.asarray(lambda_h, dtype=float)
    if lam.shape != lam_h.shape or lam.shape[0] != M.J:
        raise DimensionMismatch("eigenvalue lists and overlap sizes differ")
    w = np.abs(M.entries) ** 2
    rad = lam.sum() - 2.0 * np.sum(lam[:, None] * w) + lam_h.sum()
    return _safe_sqrt(rad, scale=lam.sum() + lam_h.sum())


def eigenvector_error_energy(lambda_exact, lambda_h, M_aligned: OverlapMatrix) -> float:
    """Energy norm of the difference of aligned eigenvector frames."""
    lam = np.asarray(lambda_exact, dtype=float)
    lam_h = np.asarray(lambda_h, dtype=float)
    sq_dist = 2.0 * (1.0 - np.real(np.diag(M_aligned.entries)))
    rad = np.sum(lam_h - lam) + np.sum(lam * sq_dist)
    return _safe_sqrt(rad, scale=lam.sum() + lam_h.sum())


def eigenvalue_sum_bounds(dm_energy_err: float, dm_l2_err: float,
                          lambda_M_upper: float) -> tuple[float, float]:
    """Bracket for the sum of eigenvalue errors from the two projector distances."""
    upper = dm_energy_err ** 2
    lower = upper - lambda_M_upper * dm_l2_err ** 2
    return lower, upper


def frame_distances(ref_vectors: np.ndarray, ref_values, approx_vectors: np.ndarray,
                    apply_energy: Callable, metric=None) -> tuple[float, float]:
    """Projector distances in L2 and energy norm, evaluated from vectors.

    Equivalent to ``dm_l2_distance`` / ``dm_energy_distance`` but written as
    sums of nonnegative terms, so no cancellation occurs when the frames are
    close (errors far below sqrt(machine epsilon)).

    Parameters
    ----------
    ref_vectors : ndarray
        Orthonormal exact (reference) eigenvectors, columns.
    ref_values : array_like
        Their eigenvalues under ``apply_energy``.
    approx_vectors : ndarray
        Orthonormal approximate vectors in the same ambient space.
    apply_energy : callable
        Action of the operator whose quadratic form is the energy.
    metric : optional
        Gram operator of the ambient basis.

    Returns
    -------
    err_l2, err_energy : float
    """
    G = _metric_apply(metric)
    lam = np.asarray(ref_values, dtype=float)
    Gh = G(approx_vectors)
    M = ref_vectors.conj().T @ Gh
    # parts of each frame orthogonal to the other subspace
    p = ref_vectors - approx_vectors @ (Gh.conj().T @ ref_vectors)
    w = approx_vectors - ref_vectors @ M
    p_sq = np.real(np.sum(p.conj() * G(p), axis=0))
    w_energy = np.real(np.sum(w.conj() * apply_energy(w), axis=0))
    err_l2 = math.sqrt(max(2.0 * p_sq.sum(), 0.0))
    err_energy = math.sqrt(max(float(np.sum(lam * p_sq) + w_energy.sum()), 0.0))
    return err_l2, err_energy


def check_cluster_match(M: OverlapMatrix, tol: float = 1e-6) -> None:
    """Raise ClusterMismatch if the frames span visibly different subspaces."""
    s = M.singular_values()
    if s[-1] < tol:
        raise ClusterMismatch(f"overlap singular value {s[-1]:.2e}: reference and "
                              "approximate clusters do not correspond")


def energy_bound_upper(res_sq: float, dm_l2_sq: float, c_h: float, lambda_M: float) -> float:
    """Upper bound for the squared energy projector distance.

    ``2 c_h^2 ||Res||^2 + lambda_M/2 ||gamma - gamma_h||^4``.
    """
    return 2.0 * c_h ** 2 * res_sq + 0.5 * lambda_M * dm_l2_sq ** 2


def energy_bound_crude(res_sq: float, dm_l2_sq: float, lambda_M: float,
                       lambda_Mh: float) -> float:
    """Assumption-light upper bound ``||Res||^2 + (lambda_M + lambda_Mh) ||.||^2``."""
    return res_sq + (lambda_M + lambda_Mh) * dm_l2_sq


def l2_bound_from_weak_residual(res_weak: float, c_h: float) -> float:
    """L2 projector distance bound from the ``A^{-1/2}``-weighted residual norm."""
    return math.sqrt(2.0) * c_h * res_weak


def l2_bound_from_residual(res: float, c_tilde_h: float) -> float:
    """L2 projector distance bound from the dual residual norm."""
    return math.sqrt(2.0) * c_tilde_h * res


def residual_lower_bound_rhs(energy_sq: float, dm_l2_sq: float, c_bar_h: float,
                             lambda_m: float, lambda_M: float) -> float:
    """Right-hand side of the efficiency inequality bounding ``||Res||^2``.

    Used only as a diagnostic: the residual norm should never exceed it.
    """
    d4 = dm_l2_sq ** 2
    bracket = (2.0 * (1.0 + lambda_M / (4.0 * lambda_m) * dm_l2_sq) ** 2 * energy_sq ** 2
               + 2.0 * lambda_M ** 2 * d4)
    return (c_bar_h * energy_sq + 3.0 * (lambda_M - lambda_m) ** 2 / (4.0 * lambda_m) * d4
            + 3.0 / lambda_m * (1.0 + 0.25 * d4) * bracket)


def _safe_sqrt(rad: float, scale: float = 1.0) -> float:
    tol = RADICAND_TOL * max(1.0, abs(scale))
    if rad < -tol:
        raise NegativeRadicand(f"negative radicand {rad:.3e}; inputs not orthonormal?")
    return math.sqrt(max(rad, 0.0))
