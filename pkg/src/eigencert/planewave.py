"""Planewave discretization of -Laplace + V on a periodic box.

The box is ``[0, L)^d`` with ``d`` in {1, 2}. Discrete spaces are spanned by
``exp(i g.x)`` with ``g = (2 pi / L) k`` for integer ``k`` in the tensor box
``max|k_j| <= N``; coefficients are stored in lexicographic order of ``k``.

The potential is given by Fourier-series coefficients
``V(x) = sum_k c_k exp(i g_k.x)`` with ``c_k = alpha / |k|^2`` for
``0 < max|k_j| <= K_V``; ``c_0`` is calibrated so that ``min V = 1``. In the
normalized basis ``|Omega|^{-1/2} exp(i g.x)`` the Hamiltonian entries are
``|g_k|^2 delta_kl + c_{k-l}``. Because ``V`` is real and even, that matrix
is real symmetric, so all solves run in real arithmetic.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import DimensionMismatch, GalerkinViolation
from .linalg import DEFAULT_SEED, DENSE_SOLVE_LIMIT, dense_eig, partial_eig
from .spectral import (ClusterConstants, EigenCluster, GapBounds, SubspaceBasis,
                       compute_constants, dm_energy_distance, dm_l2_distance,
                       frame_distances, overlap, verify_gap_assumptions)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PWBasis:
    """Tensor-box planewave basis with cutoff ``N``."""
    d: int
    N: int
    L: float = TWO_PI

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("only d = 1 or 2 is supported")
        if self.N < 0:
            raise ValueError("cutoff must be nonnegative")

    @property
    def side(self) -> int:
        return 2 * self.N + 1

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.d

    @property
    def size(self) -> int:
        return self.side ** self.d

    @property
    def volume(self) -> float:
        return self.L ** self.d

    @cached_property
    def index_set(self) -> np.ndarray:
        """Integer multi-indices, shape (size, d), lexicographic."""
        k = np.arange(-self.N, self.N + 1)
        grids = np.meshgrid(*([k] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def kinetic(self) -> np.ndarray:
        """``|g(k)|^2`` for every basis index."""
        scale = (TWO_PI / self.L) ** 2
        return scale * np.sum(self.index_set.astype(float) ** 2, axis=1)

    def embed(self, coeffs: np.ndarray, larger: "PWBasis") -> np.ndarray:
        """Zero-pad coefficient columns into a basis with a larger cutoff."""
        if larger.d != self.d or larger.N < self.N or larger.L != self.L:
            raise DimensionMismatch("target basis must contain this one")
        coeffs = np.asarray(coeffs)
        cols = coeffs.reshape(self.size, -1)
        out = np.zeros(larger.shape + (cols.shape[1],), dtype=cols.dtype)
        off = larger.N - self.N
        window = tuple(slice(off, off + self.side) for _ in range(self.d))
        out[window] = cols.reshape(self.shape + (cols.shape[1],))
        out = out.reshape(larger.size, -1)
        return out if coeffs.ndim > 1 else out[:, 0]


@dataclass
class FourierPotential:
    """Even Fourier potential truncated at ``K_V`` and calibrated to ``min V = 1``.

    ``grid`` holds the series coefficients ``c_k`` for ``max|k_j| <= K_V``
    (centre entry ``c_0``), shape ``(2 K_V + 1,)*d``.
    """
    d: int
    L: float
    alpha: float
    K_V: int
    grid: np.ndarray
    sample_resolution: int
    sampled_min: float = field(default=1.0)

    @property
    def c0(self) -> float:
        return float(self.grid[(self.K_V,) * self.d])

    @property
    def v0_hat(self) -> float:
        """Zeroth coefficient in the normalized-basis convention ``(e_0, V)``."""
        return self.c0 * math.sqrt(self.L ** self.d)

    def coefficient(self, k) -> float:
        k = np.atleast_1d(k)
        if np.max(np.abs(k)) > self.K_V:
            return 0.0
        return float(self.grid[tuple(k + self.K_V)])

    def sample(self, resolution: int | None = None) -> np.ndarray:
        """Real-space values on a uniform grid with ``resolution`` points per axis."""
        G = resolution or self.sample_resolution
        return _reconstruct(self.grid, self.K_V, G, self.d)


def _reconstruct(grid: np.ndarray, K_V: int, G: int, d: int) -> np.ndarray:
    # V(x_j) = sum_k c_k exp(2 pi i k j / G): an inverse DFT of the wrapped grid
    F = np.zeros((G,) * d, dtype=complex)
    k = np.arange(-K_V, K_V + 1) % G
    F[np.ix_(*([k] * d))] = grid
    return np.real(np.fft.ifftn(F)) * G ** d


def build_potential(d: int, alpha: float, K_V: int, *, L: float = TWO_PI,
                    sample_resolution: int | None = None) -> FourierPotential:
    """Potential with coefficients ``alpha/|k|^2`` calibrated so ``min V = 1``.

    Parameters
    ----------
    d : int
        Dimension, 1 or 2.
    alpha : float
        Strength, ``alpha >= 0``.
    K_V : int
        Truncation of the Fourier series.
    sample_resolution : int, optional
        Grid points per axis for the minimum search; defaults to 4096 in 1D
        and 1024 in 2D. Must exceed ``2 K_V`` so that the grid resolves the
        truncated series without aliasing.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if K_V < 1:
        raise ValueError("K_V must be at least 1")
    G = sample_resolution or (4096 if d == 1 else 1024)
    if G <= 2 * K_V:
        raise ValueError(f"sampling grid {G} too coarse for K_V={K_V}")
    k = np.arange(-K_V, K_V + 1)
    sq = sum(np.meshgrid(*([k.astype(float) ** 2] * d), indexing="ij"))
    grid = np.zeros(sq.shape)
    nz = sq > 0
    grid[nz] = alpha / sq[nz]
    vmin = float(_reconstruct(grid, K_V, G, d).min())
    grid[(K_V,) * d] = 1.0 - vmin
    pot = FourierPotential(d, L, alpha, K_V, grid, G)
    pot.sampled_min = float(pot.sample().min())
    return pot


def _check_pair(basis: PWBasis, pot: FourierPotential) -> None:
    if basis.d != pot.d or basis.L != pot.L:
        raise DimensionMismatch("basis and potential live on different boxes")


def assemble_hamiltonian(basis: PWBasis, pot: FourierPotential) -> np.ndarray:
    """Dense Hamiltonian ``|g_k|^2 delta_kl + c_{k-l}``."""
    _check_pair(basis, pot)
    n1, K = basis.side, pot.K_V
    reach = max(K, n1 - 1)
    padded = np.zeros((2 * reach + 1,) * basis.d)
    inner = tuple(slice(reach - K, reach + K + 1) for _ in range(basis.d))
    padded[inner] = pot.grid
    i = np.arange(n1)
    diff = i[:, None] - i[None, :] + reach
    if basis.d == 1:
        H = padded[diff]
    else:
        H = padded[diff[:, None, :, None], diff[None, :, None, :]].reshape(basis.size, basis.size)
    H = np.array(H)
    H[np.diag_indices_from(H)] += basis.kinetic
    return H


class PWOperator:
    """Matrix-free Hamiltonian action via FFT convolution with the coefficient grid."""

    def __init__(self, basis: PWBasis, pot: FourierPotential):
        _check_pair(basis, pot)
        self.basis, self.pot = basis, pot
        self.full_side = basis.side + 2 * pot.K_V
        self._fshape = (scipy.fft.next_fast_len(self.full_side, real=True),) * basis.d
        self._axes = tuple(range(basis.d))
        self._cfft = scipy.fft.rfftn(pot.grid, s=self._fshape, axes=self._axes)

    def convolve_full(self, U: np.ndarray) -> np.ndarray:
        """``sum_l c_{k-l} u_l`` for all ``k`` with ``max|k_j| <= N + K_V``."""
        b = self.basis
        cols = U.reshape(b.size, -1)
        blk = cols.reshape(b.shape + (cols.shape[1],))
        uf = scipy.fft.rfftn(blk, s=self._fshape, axes=self._axes)
        cf = self._cfft.reshape(self._cfft.shape + (1,))
        full = scipy.fft.irfftn(uf * cf, s=self._fshape, axes=self._axes)
        window = tuple(slice(0, self.full_side) for _ in range(b.d))
        return full[window].reshape(-1, cols.shape[1])

    def potential_apply(self, U: np.ndarray) -> np.ndarray:
        b, K = self.basis, self.pot.K_V
        cols = U.reshape(b.size, -1)
        full = self.convolve_full(cols).reshape((self.full_side,) * b.d + (cols.shape[1],))
        window = tuple(slice(K, K + b.side) for _ in range(b.d))
        return full[window].reshape(b.size, -1)

    def __call__(self, U: np.ndarray) -> np.ndarray:
        cols = U.reshape(self.basis.size, -1)
        out = self.basis.kinetic[:, None] * cols + self.potential_apply(cols)
        return out if U.ndim > 1 else out[:, 0]

    def diagonal(self) -> np.ndarray:
        return self.basis.kinetic + self.pot.c0


@dataclass
class PWSolution:
    """Discrete eigenpairs of one planewave discretization.

    ``values`` are the lowest computed eigenvalues (at least ``M`` of them),
    ``cluster`` holds the Rayleigh quotients of the cluster vectors, which
    are more accurate than the raw eigenvalues when ``|g|^2`` is large.
    """
    basis: PWBasis
    pot: FourierPotential
    m: int
    M: int
    values: np.ndarray
    cluster: EigenCluster
    frame: SubspaceBasis

    @property
    def rayleigh(self) -> np.ndarray:
        return self.cluster.values


def pw_solve_cluster(basis: PWBasis, pot: FourierPotential, m: int, M: int, *,
                     dense_limit: int = DENSE_SOLVE_LIMIT, tol: float = 1e-11,
                     seed: int = DEFAULT_SEED, extra: int = 1) -> PWSolution:
    """Eigenpairs ``m..M`` of the planewave Galerkin problem.

    ``extra`` further eigenvalues above the cluster are computed too, so the
    discrete gap above the cluster can be inspected.
    """
    _check_pair(basis, pot)
    n = basis.size
    if M > n:
        raise DimensionMismatch(f"cluster end {M} exceeds basis size {n}")
    want = min(M + extra, n)
    op = PWOperator(basis, pot)
    if n <= dense_limit:
        H = assemble_hamiltonian(basis, pot)
        w, V = dense_eig(H, select=slice(0, want))
        w = w[:want]
    else:
        diag = op.diagonal()
        w, V, _ = partial_eig(op, n, want, precond=lambda R, th: R / diag[:, None],
                              tol=tol, seed=seed)
    U = V[:, m - 1:M]
    # Rayleigh-Ritz on the cluster span keeps the frame orthonormal and
    # replaces eigenvalues by Rayleigh quotients
    HU = op(U)
    G = U.T @ HU
    mu, Z = np.linalg.eigh(0.5 * (G + G.T))
    U = U @ Z
    rq = np.einsum("ij,ij->j", U, op(U))
    order = np.argsort(rq, kind="stable")
    U, rq = U[:, order], rq[order]
    cluster = EigenCluster(m, M, rq)
    return PWSolution(basis, pot, m, M, np.asarray(w), cluster, SubspaceBasis(U))


@dataclass
class PWResidual:
    """Residual coefficients on the extended box ``max|k_j| <= N + K_V``."""
    basis: PWBasis
    inner_cutoff: int
    coefficients: np.ndarray

    @property
    def inside_mask(self) -> np.ndarray:
        return np.max(np.abs(self.basis.index_set), axis=1) <= self.inner_cutoff


def pw_residual(basis: PWBasis, pot: FourierPotential, U: np.ndarray, lambdas, *,
                galerkin_tol: float = 1e-10) -> PWResidual:
    """Exact residual coefficients ``lambda u - |g|^2 u - V u`` of approximate pairs.

    Raises
    ------
    GalerkinViolation
        When a coefficient inside the discretization cutoff is not negligible.
    """
    op = PWOperator(basis, pot)
    cols = np.asarray(U).reshape(basis.size, -1)
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    ext = PWBasis(basis.d, basis.N + pot.K_V, basis.L)
    u_ext = basis.embed(cols, ext)
    r = lam[None, :] * u_ext - ext.kinetic[:, None] * u_ext - op.convolve_full(cols)
    res = PWResidual(ext, basis.N, r)
    inside = r[res.inside_mask]
    scale = galerkin_tol * np.abs(lam) * np.linalg.norm(cols, axis=0)
    worst = np.max(np.abs(inside), axis=0) if inside.size else np.zeros(len(lam))
    if np.any(worst > np.maximum(scale, 1e-300)):
        raise GalerkinViolation(f"residual inside the cutoff reaches {worst.max():.2e}")
    return res


def pw_dual_norms(res: PWResidual) -> tuple[float, float]:
    """Summed squared ``H^{-1}`` and ``H^{-2}`` norms of the residual columns."""
    weight = 1.0 / (1.0 + res.basis.kinetic)
    sq = np.abs(res.coefficients) ** 2
    per1 = weight @ sq
    per2 = (weight ** 2) @ sq
    return float(per1.sum()), float(per2.sum())


def pw_dual_norms_each(res: PWResidual) -> tuple[np.ndarray, np.ndarray]:
    weight = 1.0 / (1.0 + res.basis.kinetic)
    sq = np.abs(res.coefficients) ** 2
    return weight @ sq, (weight ** 2) @ sq


def regularity_factor(N: int, L: float = TWO_PI) -> float:
    """``L / (2 pi N)``: ratio between the two dual norms outside the cutoff."""
    return L / (TWO_PI * N)


def check_regularity(res: PWResidual, N: int, L: float = TWO_PI, slack: float = 1e-12) -> bool:
    """True when each ``H^{-2}`` norm is below the factor times its ``H^{-1}`` norm."""
    h1, h2 = pw_dual_norms_each(res)
    fac = regularity_factor(N, L)
    return bool(np.all(np.sqrt(h2) <= fac * np.sqrt(h1) * (1 + slack) + slack))


def pw_lower_bounds(d: int, upto: int, L: float = TWO_PI) -> np.ndarray:
    """Lowest ``upto`` eigenvalues of ``-Laplace + 1`` on the torus, ascending.

    They bound the eigenvalues of ``-Laplace + V`` from below whenever
    ``V >= 1``.
    """
    r = 1
    while _ball_count(r, d) < upto:
        r += 1
    k = np.arange(-r, r + 1).astype(float)
    sq = sum(np.meshgrid(*([k ** 2] * d), indexing="ij")).ravel()
    vals = np.sort(1.0 + (TWO_PI / L) ** 2 * sq)
    return vals[:upto]


def _ball_count(r: int, d: int) -> int:
    # every |k|^2 <= r^2 is present in the box of radius r
    k = np.arange(-r, r + 1)
    sq = sum(np.meshgrid(*([k ** 2] * d), indexing="ij"))
    return int(np.sum(sq <= r * r))


def pw_gap_bounds(sol: PWSolution, lower: np.ndarray | None = None) -> GapBounds:
    """Gap bounds for a planewave cluster from the free-torus lower bounds."""
    if lower is None:
        lower = pw_lower_bounds(sol.basis.d, sol.M + 1, sol.basis.L)
    upper_prev = float(sol.values[sol.m - 2]) if sol.m > 1 else None
    return GapBounds(lower_next=float(lower[sol.M]), upper_prev=upper_prev,
                     lower_first=float(lower[0]))


def pw_estimators(eta_res_sq: float, c_N: float, lambda_Mh: float, N: int,
                  L: float = TWO_PI) -> tuple[float, float]:
    """Guaranteed estimators for the eigenvalue sum and the L2 projector error.

    Returns
    -------
    eta_sq : float
        Bound for the sum of eigenvalue errors (its square root bounds the
        energy projector distance).
    eta_l2 : float
        Bound for the L2 projector distance.
    """
    eta_sq = (1.0 + (L ** 2 * lambda_Mh / math.pi ** 2) * c_N ** 2 / N ** 2) * eta_res_sq
    eta_l2 = math.sqrt(2.0) * c_N * regularity_factor(N, L) * math.sqrt(eta_res_sq)
    return eta_sq, eta_l2


@dataclass
class PWEstimate:
    verdict: object
    constants: ClusterConstants | None
    eta_res_sq: float
    eta_sq: float
    eta: float
    eta_l2: float
    regularity_ok: bool


def pw_estimate(sol: PWSolution, lower: np.ndarray | None = None) -> PWEstimate:
    """Residual, gap check, constants and estimators for one solution."""
    gaps = pw_gap_bounds(sol, lower)
    verdict = verify_gap_assumptions(sol.values, sol.m, sol.M, gaps)
    res = pw_residual(sol.basis, sol.pot, sol.frame.vectors, sol.rayleigh)
    eta_res_sq, _ = pw_dual_norms(res)
    reg_ok = check_regularity(res, sol.basis.N, sol.basis.L)
    if not verdict:
        nan = math.nan
        return PWEstimate(verdict, None, eta_res_sq, nan, nan, nan, reg_ok)
    consts = compute_constants(sol.rayleigh, gaps, m=sol.m)
    eta_sq, eta_l2 = pw_estimators(eta_res_sq, consts.c_h, sol.rayleigh[-1], sol.basis.N,
                                   sol.basis.L)
    return PWEstimate(verdict, consts, eta_res_sq, eta_sq, math.sqrt(eta_sq), eta_l2, reg_ok)


def pw_reference_errors(ref: PWSolution, approx: PWSolution, *, stable: bool = True):
    """Errors of ``approx`` measured against the finer solution ``ref``.

    Returns
    -------
    err_lambda, err_h1, err_l2 : float
        Eigenvalue-sum error and the energy / L2 projector distances.

    Notes
    -----
    With ``stable=True`` the distances are evaluated from the components of
    each frame orthogonal to the other subspace; the overlap formulas lose
    all accuracy once the distances drop below about 1e-8.
    """
    if approx.basis.N > ref.basis.N or (approx.m, approx.M) != (ref.m, ref.M):
        raise DimensionMismatch("reference must be finer and describe the same cluster")
    Ue = approx.basis.embed(approx.frame.vectors, ref.basis)
    err_lambda = float(np.sum(approx.rayleigh) - np.sum(ref.rayleigh))
    if stable:
        op = PWOperator(ref.basis, ref.pot)
        err_l2, err_h1 = frame_distances(ref.frame.vectors, ref.rayleigh, Ue, op)
    else:
        Mo = overlap(ref.frame, SubspaceBasis(Ue, check=False))
        err_l2 = dm_l2_distance(Mo)
        err_h1 = dm_energy_distance(ref.rayleigh, approx.rayleigh, Mo)
    return err_lambda, err_h1, err_l2


# ---------------------------------------------------------------- text output

def dump_potential_csv(pot: FourierPotential, path) -> None:
    """Write the nonzero coefficients, one multi-index per row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"k{j + 1}" for j in range(pot.d)] + ["coefficient"])
        k = np.arange(-pot.K_V, pot.K_V + 1)
        for idx in itertools.product(range(len(k)), repeat=pot.d):
            val = pot.grid[idx]
            if val != 0.0:
                w.writerow([int(k[i]) for i in idx] + [repr(float(val))])


def dump_eigenpairs_csv(sol: PWSolution, path) -> None:
    """Index set followed by real/imaginary parts of every cluster vector."""
    U = sol.frame.vectors
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# eigenvalues"] + [repr(float(v)) for v in sol.rayleigh])
        head = [f"k{j + 1}" for j in range(sol.basis.d)]
        for j in range(U.shape[1]):
            head += [f"re_{sol.m + j}", f"im_{sol.m + j}"]
        w.writerow(head)
        for row, k in enumerate(sol.basis.index_set):
            vals = []
            for j in range(U.shape[1]):
                z = complex(U[row, j])
                vals += [repr(z.real), repr(z.imag)]
            w.writerow([int(x) for x in k] + vals)


def _cache_key(pot: FourierPotential, N_ref: int, m: int, M: int, seed: int) -> str:
    return (f"d={pot.d} L={pot.L!r} alpha={pot.alpha!r} K_V={pot.K_V} N_ref={N_ref} "
            f"seed={seed} m={m} M={M} grid={pot.sample_resolution}")


def default_cache_dir() -> Path:
    return Path(os.environ.get("EIGENCERT_CACHE",
                               Path.home() / ".cache" / "eigencert"))


def reference_solution(pot: FourierPotential, N_ref: int, m: int, M: int, *,
                       seed: int = DEFAULT_SEED, cache_dir=None, **solve_kw) -> PWSolution:
    """Reference solve, read from / written to a plain-text cache when asked."""
    basis = PWBasis(pot.d, N_ref, pot.L)
    key = _cache_key(pot, N_ref, m, M, seed)
    path = None
    if cache_dir is not None:
        digest = hashlib.sha1(key.encode()).hexdigest()[:16]
        path = Path(cache_dir) / f"pwref_{digest}.txt"
        if path.exists():
            sol = _read_reference(path, key, basis, pot, m, M)
            if sol is not None:
                return sol
    sol = pw_solve_cluster(basis, pot, m, M, seed=seed, **solve_kw)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_reference(path, key, sol)
    return sol


def _write_reference(path: Path, key: str, sol: PWSolution) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {key}\n")
        fh.write("values " + " ".join(repr(float(v)) for v in sol.values) + "\n")
        fh.write("rayleigh " + " ".join(repr(float(v)) for v in sol.rayleigh) + "\n")
        np.savetxt(fh, sol.frame.vectors, fmt="%.17e")


def _read_reference(path: Path, key: str, basis, pot, m, M) -> PWSolution | None:
    with open(path) as fh:
        if fh.readline().strip() != f"# {key}":
            return None
        values = np.array(fh.readline().split()[1:], dtype=float)
        rq = np.array(fh.readline().split()[1:], dtype=float)
        U = np.loadtxt(fh, ndmin=2)
    if U.shape != (basis.size, M - m + 1):
        return None
    return PWSolution(basis, pot, m, M, values, EigenCluster(m, M, rq), SubspaceBasis(U))
