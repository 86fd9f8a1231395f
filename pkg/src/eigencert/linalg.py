"""Dense and iterative eigensolvers, small SVD and saddle-point solves.

The dense symmetric/Hermitian path reduces a generalized problem with a
Cholesky factor, tridiagonalizes with Householder reflectors and runs an
implicit-shift QL iteration. Large problems go through a block
preconditioned conjugate-gradient iteration (LOBPCG) driven only by
operator applications.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import Breakdown, DimensionMismatch, NoConvergence, NotSPD, SingularSystem

DEFAULT_SEED = 42
DENSE_LIMIT = 4096
# above this size the solvers prefer the iterative path; the O(n^3)
# tridiagonalization is slower than a preconditioned block iteration there
DENSE_SOLVE_LIMIT = 1500


def make_rng(seed: int | None = None) -> np.random.Generator:
    """Seeded generator used for every random start block."""
    return np.random.default_rng(DEFAULT_SEED if seed is None else seed)


def _check_hermitian(A: np.ndarray, name: str = "A") -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale and np.max(np.abs(A - A.conj().T)) > 1e-12 * scale:
        raise ValueError(f"{name} is not self-adjoint")


def householder_tridiagonalize(A: np.ndarray):
    """Reduce a Hermitian matrix to real symmetric tridiagonal form.

    Returns
    -------
    d, e : ndarray
        Diagonal and real off-diagonal of the tridiagonal matrix.
    back : callable
        Maps eigenvectors of the tridiagonal matrix to eigenvectors of ``A``.
    """
    A = np.array(A, dtype=np.result_type(A.dtype, np.float64), copy=True)
    n = A.shape[0]
    if not np.iscomplexobj(A):
        return _householder_real(A)
    reflectors = []
    for k in range(n - 2):
        x = A[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            reflectors.append(None)
            continue
        x0 = x[0]
        phase = x0 / abs(x0) if x0 != 0 else 1.0
        v = x.copy()
        v[0] += phase * alpha
        v /= np.linalg.norm(v)
        sub = A[k + 1:, k + 1:]
        p = sub @ v
        w = p - (np.vdot(v, p).real) * v
        sub -= 2.0 * (np.outer(v, w.conj()) + np.outer(w, v.conj()))
        A[k + 1:, k] = 0.0
        A[k, k + 1:] = 0.0
        A[k + 1, k] = -phase * alpha
        A[k, k + 1] = np.conj(A[k + 1, k])
        reflectors.append(v)
    d = np.real(np.diag(A)).copy()
    off = np.diag(A, -1).copy()
    # diagonal phase similarity that makes the off-diagonal real
    phases = np.ones(n, dtype=A.dtype)
    e = np.zeros(n)
    for k in range(n - 1):
        mag = abs(off[k])
        e[k] = mag
        phases[k + 1] = phases[k] * (off[k] / mag if mag > 0 else 1.0)

    def back(Y: np.ndarray) -> np.ndarray:
        X = phases[:, None] * Y
        for k in range(len(reflectors) - 1, -1, -1):
            v = reflectors[k]
            if v is None:
                continue
            blk = X[k + 1:]
            blk -= 2.0 * np.outer(v, v.conj() @ blk)
        return X

    return d, e, back


def _householder_real(A: np.ndarray):
    n = A.shape[0]
    vs = np.zeros((max(n - 2, 0), n))
    A = np.ascontiguousarray(A)
    _kernels.householder_real(A, vs)
    d = np.diag(A).copy()
    off = np.diag(A, -1)
    e = np.zeros(n)
    e[:n - 1] = np.abs(off)
    signs = np.ones(n)
    for k in range(n - 1):
        if off[k] < 0:
            signs[k + 1:] *= -1.0

    def back(Y: np.ndarray) -> np.ndarray:
        X = signs[:, None] * Y
        for k in range(n - 3, -1, -1):
            v = vs[k, k + 1:]
            if not v.any():
                continue
            blk = X[k + 1:]
            blk -= 2.0 * np.outer(v, v @ blk)
        return X

    return d, e, back


def dense_eig(A, B=None, *, select=None, vectors: bool = True,
              dense_limit: int = DENSE_LIMIT):
    """All eigenpairs of ``A v = lambda B v`` for self-adjoint ``A``, SPD ``B``.

    Parameters
    ----------
    A, B : array_like
        Dense self-adjoint matrices; ``B`` defaults to the identity.
    select : slice or sequence of int, optional
        Columns of the (ascending) eigenvector matrix to return.
    vectors : bool
        If false only eigenvalues are computed.

    Returns
    -------
    w : ndarray
        All eigenvalues, ascending.
    V : ndarray
        ``B``-orthonormal eigenvectors (the selected columns), or None.
    """
    A = np.asarray(A)
    _check_hermitian(A)
    n = A.shape[0]
    if n > dense_limit:
        raise DimensionMismatch(f"n={n} exceeds dense limit {dense_limit}")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0)) if vectors else None
    L = None
    if B is not None:
        B = np.asarray(B)
        _check_hermitian(B, "B")
        if B.shape != A.shape:
            raise DimensionMismatch("A and B shapes differ")
        try:
            L = np.linalg.cholesky(B)
        except np.linalg.LinAlgError as exc:
            raise NotSPD("Cholesky factorization of B failed") from exc
        C = scipy.linalg.solve_triangular(L, A, lower=True)
        C = scipy.linalg.solve_triangular(L, C.conj().T, lower=True).conj().T
        C = 0.5 * (C + C.conj().T)
    else:
        C = A
    d, e, back = householder_tridiagonalize(C)
    if vectors and select is not None:
        picked = np.arange(n)[select]
        if len(picked) <= n // 8:
            return _eig_selected(d, e, back, picked, L)
    z = np.eye(n) if vectors else np.zeros((1, 1))
    sweeps = _kernels.tridiagonal_ql(d, e, z, vectors, 30 * n)
    z = z.T
    if sweeps < 0:
        raise NoConvergence(f"QL iteration exceeded {30 * n} sweeps")
    order = np.argsort(d, kind="stable")
    w = d[order]
    if not vectors:
        return w, None
    cols = order if select is None else order[select]
    V = back(z[:, cols])
    if L is not None:
        V = scipy.linalg.solve_triangular(L.conj().T, V, lower=False)
    return w, V


def _eig_selected(d, e, back, picked, L):
    # eigenvalues by QL, then inverse iteration for the few requested vectors
    n = d.shape[0]
    dq, eq = d.copy(), e.copy()
    if _kernels.tridiagonal_ql(dq, eq, np.zeros((1, 1)), False, 30 * n) < 0:
        raise NoConvergence(f"QL iteration exceeded {30 * n} sweeps")
    w = np.sort(dq)
    lams = w[picked]
    z = np.zeros((len(picked), n))
    seed_vec = make_rng(DEFAULT_SEED).uniform(-1.0, 1.0, n)
    scale = max(np.max(np.abs(w)), 1e-300)
    _kernels.tridiagonal_inverse_iteration(d, e, lams, z, seed_vec, 1e-3 * scale)
    V = back(z.T.copy())
    if L is not None:
        V = scipy.linalg.solve_triangular(L.conj().T, V, lower=False)
    return w, V


def jacobi_eig(S: np.ndarray, max_sweeps: int = 60):
    """Eigen-decomposition of a small Hermitian matrix by cyclic Jacobi.

    Returns ascending eigenvalues and the unitary eigenvector matrix; the
    result is real when ``S`` is real.
    """
    S = np.asarray(S)
    is_complex = np.iscomplexobj(S)
    a = np.array(0.5 * (S + S.conj().T), dtype=np.complex128)
    v = np.eye(a.shape[0], dtype=np.complex128)
    if _kernels.jacobi_hermitian(a, v, max_sweeps) < 0:
        raise NoConvergence("Jacobi sweeps exhausted")
    w = np.real(np.diag(a))
    order = np.argsort(w, kind="stable")
    v = v[:, order]
    if not is_complex:
        v = v.real
    return w[order], v


def svd_small(M: np.ndarray):
    """Singular value decomposition ``M = U diag(s) V*`` of a small matrix.

    One-sided Jacobi on the columns of ``M``; singular values descending.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch("svd_small expects a square matrix")
    J = M.shape[0]
    if J > 64:
        raise DimensionMismatch("svd_small is limited to J <= 64")
    is_complex = np.iscomplexobj(M)
    u = np.array(M, dtype=np.complex128)
    v = np.eye(J, dtype=np.complex128)
    if _kernels.one_sided_jacobi(u, v, 80) < 0:
        raise NoConvergence("one-sided Jacobi did not converge")
    s = np.linalg.norm(u, axis=0)
    order = np.argsort(-s, kind="stable")
    s, u, v = s[order], u[:, order], v[:, order]
    scale = s[0] if J else 0.0
    U = np.zeros_like(u)
    good = s > 1e-14 * max(scale, 1e-300)
    U[:, good] = u[:, good] / s[good]
    if not good.all():
        # complete the left basis for zero singular values
        basis = [U[:, j] for j in np.flatnonzero(good)]
        for j in np.flatnonzero(~good):
            for cand in np.eye(J, dtype=np.complex128):
                w = cand - sum(np.vdot(b, cand) * b for b in basis)
                nw = np.linalg.norm(w)
                if nw > 1e-8:
                    basis.append(w / nw)
                    U[:, j] = w / nw
                    break
        s[~good] = 0.0
    if not is_complex:
        U, v = U.real, v.real
    return U, s, v


def _svqb(S: np.ndarray, BS: np.ndarray, drop: float = 1e-13):
    """Coefficient matrix turning ``S`` into a B-orthonormal basis.

    Directions whose scaled Gram eigenvalue falls below ``drop`` are removed.
    """
    G = S.conj().T @ BS
    dg = np.sqrt(np.abs(np.real(np.diag(G))))
    dg[dg == 0] = 1.0
    Gs = G / np.outer(dg, dg)
    mu, Q = jacobi_eig(Gs)
    keep = mu > drop * max(mu[-1], 1e-300)
    return (Q[:, keep] / np.sqrt(mu[keep])) / dg[:, None]


@dataclass
class EigInfo:
    iterations: int
    residual_norms: np.ndarray
    restarts: int


def partial_eig(apply_A: Callable, n: int, k: int, *, apply_B: Callable | None = None,
                precond: Callable | None = None, tol: float = 1e-8,
                seed: int | None = None, maxiter: int = 2000, x0=None,
                dtype=np.float64, residual_weight: np.ndarray | None = None,
                block: int | None = None):
    """Lowest ``k`` eigenpairs of a self-adjoint pencil by block LOBPCG.

    Parameters
    ----------
    apply_A, apply_B : callable
        Map an ``(n, b)`` block to its image. ``apply_B`` defaults to identity.
    precond : callable, optional
        ``precond(R, theta)`` returns the preconditioned residual block.
    tol : float
        Converged when ``||r_i||_W <= tol * |theta_i|`` for all ``i < k``;
        ``W`` is ``residual_weight`` (a diagonal) or the identity.
    x0 : ndarray, optional
        Initial guess columns placed in front of the random start block.

    Returns
    -------
    w : ndarray
        Ritz values, ascending.
    X : ndarray
        B-orthonormal Ritz vectors.
    info : EigInfo
    """
    bs = block if block is not None else k + max(4, k // 2)
    bs = min(bs, n)
    if 3 * bs >= n:
        return _partial_eig_dense(apply_A, apply_B, n, k, dtype)
    rng = make_rng(seed)
    X = rng.standard_normal((n, bs))
    if np.issubdtype(np.dtype(dtype), np.complexfloating):
        X = X + 1j * rng.standard_normal((n, bs))
    if x0 is not None:
        x0 = np.asarray(x0).reshape(n, -1)
        X[:, :x0.shape[1]] = x0
    Bop = apply_B if apply_B is not None else (lambda V: V)
    wgt = residual_weight

    def norms(R):
        if wgt is None:
            return np.sqrt(np.sum(np.abs(R) ** 2, axis=0))
        return np.sqrt(np.sum(wgt[:, None] * np.abs(R) ** 2, axis=0))

    BX = Bop(X)
    T = _svqb(X, BX)
    if T.shape[1] < bs:
        raise Breakdown("start block is rank deficient")
    X, BX = X @ T, BX @ T
    AX = apply_A(X)
    theta, Z = jacobi_eig(X.conj().T @ AX)
    X, AX, BX = X @ Z, AX @ Z, BX @ Z
    P = AP = BP = None
    restarts = 0
    rn = np.full(bs, np.inf)

    def project(V, AV, BV):
        # remove span(X) twice; a single pass leaves eps*|X| round-off that
        # dominates once the residual directions are tiny
        for _ in range(2):
            C = BX.conj().T @ V
            V, AV, BV = V - X @ C, AV - AX @ C, BV - BX @ C
        return V, AV, BV

    for it in range(1, maxiter + 1):
        R = AX - BX * theta
        rn = norms(R)
        conv = rn <= tol * np.abs(theta)
        if conv[:k].all():
            return theta[:k], X[:, :k], EigInfo(it, rn[:k], restarts)
        act = ~conv
        W = R[:, act]
        if precond is not None:
            W = precond(W, theta[act])
        W = W / np.maximum(np.linalg.norm(W, axis=0), 1e-300)
        W, AW, BW = project(W, apply_A(W), Bop(W))
        if P is not None:
            P, AP, BP = project(P, AP, BP)
            Z, AZ, BZ = np.hstack([W, P]), np.hstack([AW, AP]), np.hstack([BW, BP])
        else:
            Z, AZ, BZ = W, AW, BW
        T = _svqb(Z, BZ)
        if T.shape[1] < Z.shape[1] and P is not None:
            # search directions became dependent: restart without them
            restarts += 1
            Z, AZ, BZ = W, AW, BW
            T = _svqb(Z, BZ)
        if T.shape[1] == 0:
            raise Breakdown("no new search directions left")
        Q, AQ, BQ = Z @ T, AZ @ T, BZ @ T
        S, AS = np.hstack([X, Q]), np.hstack([AX, AQ])
        BS = np.hstack([BX, BQ])
        G = S.conj().T @ AS
        mu, C = jacobi_eig(0.5 * (G + G.conj().T))
        C = C[:, :bs]
        theta = mu[:bs]
        # search directions: the part of the update outside span(X)
        Cq = C[bs:]
        P, AP, BP = Q @ Cq, AQ @ Cq, BQ @ Cq
        X, AX, BX = S @ C, AS @ C, BS @ C
        if it % 25 == 0:
            T = _svqb(X, BX)
            if T.shape[1] < bs:
                raise Breakdown("iterate block lost rank")
            X, AX, BX = X @ T, AX @ T, BX @ T
            theta, Z = jacobi_eig(X.conj().T @ AX)
            X, AX, BX = X @ Z, AX @ Z, BX @ Z
    raise NoConvergence(f"LOBPCG did not converge in {maxiter} iterations "
                        f"(max residual {np.max(rn[:k]):.3e})")


def _partial_eig_dense(apply_A, apply_B, n, k, dtype):
    eye = np.eye(n, dtype=dtype)
    A = apply_A(eye)
    B = apply_B(eye) if apply_B is not None else None
    A = 0.5 * (A + A.conj().T)
    if B is not None:
        B = 0.5 * (B + B.conj().T)
    w, V = dense_eig(A, B, select=slice(0, k))
    return w[:k], V, EigInfo(0, np.zeros(k), 0)


def rayleigh_ritz(X: np.ndarray, AX: np.ndarray, BX: np.ndarray | None = None):
    """Ritz pairs of the pencil restricted to span(X).

    Returns ascending Ritz values and the coefficient matrix ``C`` such that
    ``X @ C`` are (B-orthonormal) Ritz vectors.
    """
    BX = X if BX is None else BX
    T = _svqb(X, BX)
    G = T.conj().T @ (X.conj().T @ AX) @ T
    mu, Z = jacobi_eig(G)
    return mu, T @ Z


@dataclass
class SaddleSystem:
    """Blocks of ``[[A, B^T], [B, 0]] [sigma; p] = [f; g]``."""
    A: np.ndarray
    B: np.ndarray
    f: np.ndarray
    g: np.ndarray

    def matrix(self) -> np.ndarray:
        nv, nq = self.A.shape[0], self.B.shape[0]
        K = np.zeros((nv + nq, nv + nq))
        K[:nv, :nv] = self.A
        K[:nv, nv:] = self.B.T
        K[nv:, :nv] = self.B
        return K


def solve_saddle(sys: SaddleSystem, pivot_tol: float = 1e-13):
    """Solve a symmetric saddle-point system with a pivoted LDL^T factorization.

    Raises
    ------
    SingularSystem
        When a pivot block is numerically singular.
    """
    nv = sys.A.shape[0]
    nq = sys.B.shape[0]
    if sys.B.shape[1] != nv or sys.f.shape[0] != nv or sys.g.shape[0] != nq:
        raise DimensionMismatch("inconsistent saddle-point blocks")
    if nv + nq > 2000:
        raise DimensionMismatch("saddle system too large for the dense path")
    K = sys.matrix()
    rhs = np.concatenate([sys.f, sys.g]).astype(float)
    lu, dblk, perm = scipy.linalg.ldl(K, lower=True)
    scale = max(np.max(np.abs(K)), 1e-300)
    i = 0
    N = K.shape[0]
    while i < N:
        if i + 1 < N and dblk[i + 1, i] != 0.0:
            ev = np.linalg.eigvalsh(dblk[i:i + 2, i:i + 2])
            if np.min(np.abs(ev)) < pivot_tol * scale:
                raise SingularSystem(f"2x2 pivot at {i} is singular")
            i += 2
        else:
            if abs(dblk[i, i]) < pivot_tol * scale:
                raise SingularSystem(f"pivot {i} below tolerance")
            i += 1
    Lt = lu[perm]
    y = scipy.linalg.solve_triangular(Lt, rhs[perm], lower=True, unit_diagonal=True)
    z = np.linalg.solve(dblk, y) if N < 64 else scipy.linalg.solve(dblk, y)
    xp = scipy.linalg.solve_triangular(Lt.T, z, lower=False, unit_diagonal=True)
    x = np.empty_like(xp)
    x[perm] = xp
    res = np.linalg.norm(K @ x - rhs)
    bound = 1e-11 * (np.linalg.norm(sys.f) + np.linalg.norm(sys.g))
    if res > max(bound, 1e-13 * scale * np.linalg.norm(x)):
        # one step of iterative refinement
        x += _ldl_apply(Lt, dblk, perm, rhs - K @ x)
    return x[:nv], x[nv:]


def _ldl_apply(Lt, dblk, perm, r):
    y = scipy.linalg.solve_triangular(Lt, r[perm], lower=True, unit_diagonal=True)
    z = scipy.linalg.solve(dblk, y)
    xp = scipy.linalg.solve_triangular(Lt.T, z, lower=False, unit_diagonal=True)
    x = np.empty_like(xp)
    x[perm] = xp
    return x


def solve_saddle_batched(A: np.ndarray, B: np.ndarray, f: np.ndarray, g: np.ndarray):
    """Solve a stack of saddle-point systems sharing block sizes.

    ``A`` has shape (P, nv, nv), ``B`` (P, nq, nv); ``f`` (P, nv, r) and
    ``g`` (P, nq, r) carry ``r`` right-hand sides per system. LU with
    partial pivoting on each assembled system.
    """
    P, nv, _ = A.shape
    nq = B.shape[1]
    K = np.zeros((P, nv + nq, nv + nq))
    K[:, :nv, :nv] = A
    K[:, :nv, nv:] = np.swapaxes(B, 1, 2)
    K[:, nv:, :nv] = B
    rhs = np.concatenate([f, g], axis=1)
    try:
        x = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("singular patch system in batch") from exc
    res = np.linalg.norm(np.einsum("pij,pjr->pir", K, x) - rhs, axis=1)
    ref = np.linalg.norm(f, axis=1) + np.linalg.norm(g, axis=1)
    xs = np.linalg.norm(x, axis=1)
    if np.any(res > 1e-11 * ref + 1e-12 * xs):
        raise SingularSystem("patch system solve lost accuracy")
    return x[:, :nv], x[:, nv:]
