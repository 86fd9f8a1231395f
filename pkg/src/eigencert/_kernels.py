"""Compiled inner loops for the dense eigensolvers.

The loops are plain Python and are compiled with numba when it is
importable; without numba they still run, only slower.
"""
import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda func: func

_EPS = np.finfo(np.float64).eps


@njit(cache=True)
def tridiagonal_ql(d, e, z, want_vectors, max_sweeps):
    """Implicit-shift QL on a real symmetric tridiagonal matrix, in place.

    ``d`` holds the diagonal, ``e[i]`` couples entries ``i`` and ``i+1``
    (``e[n-1]`` is ignored). When ``want_vectors`` is true the plane
    rotations are accumulated into the rows of ``z`` (so the eigenvectors
    end up as rows, which keeps the inner loop contiguous).

    Returns the number of sweeps used, or -1 if ``max_sweeps`` was exceeded.
    """
    n = d.shape[0]
    if n == 0:
        return 0
    e[n - 1] = 0.0
    sweeps = 0
    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= _EPS * dd:
                    break
                m += 1
            if m == l:
                break
            sweeps += 1
            if sweeps > max_sweeps:
                return -1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            deflated = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    deflated = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if want_vectors:
                    for k in range(n):
                        f = z[i + 1, k]
                        z[i + 1, k] = s * z[i, k] + c * f
                        z[i, k] = c * z[i, k] - s * f
                i -= 1
            if deflated:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return sweeps


@njit(cache=True)
def householder_real(a, vs):
    """Tridiagonalise a real symmetric matrix in place.

    Reflector ``k`` (acting on indices ``k+1:``) is stored in ``vs[k, k+1:]``;
    a zero row means no reflection was needed. Only the lower triangle of
    the trailing block is kept up to date.
    """
    n = a.shape[0]
    p = np.zeros(n)
    for k in range(n - 2):
        alpha = 0.0
        for i in range(k + 1, n):
            alpha += a[i, k] * a[i, k]
        alpha = math.sqrt(alpha)
        if alpha == 0.0:
            continue
        x0 = a[k + 1, k]
        sgn = 1.0 if x0 >= 0.0 else -1.0
        vn = 0.0
        for i in range(k + 1, n):
            vs[k, i] = a[i, k]
        vs[k, k + 1] += sgn * alpha
        for i in range(k + 1, n):
            vn += vs[k, i] * vs[k, i]
        vn = math.sqrt(vn)
        for i in range(k + 1, n):
            vs[k, i] /= vn
        # p = sub @ v using the lower triangle
        for i in range(k + 1, n):
            p[i] = 0.0
        for j in range(k + 1, n):
            vj = vs[k, j]
            acc = a[j, j] * vj
            for i in range(j + 1, n):
                aij = a[i, j]
                p[i] += aij * vj
                acc += aij * vs[k, i]
            p[j] += acc
        vp = 0.0
        for i in range(k + 1, n):
            vp += vs[k, i] * p[i]
        for i in range(k + 1, n):
            p[i] -= vp * vs[k, i]
        for j in range(k + 1, n):
            vj = vs[k, j]
            pj = p[j]
            for i in range(j, n):
                a[i, j] -= 2.0 * (vs[k, i] * pj + p[i] * vj)
        a[k + 1, k] = -sgn * alpha
        for i in range(k + 2, n):
            a[i, k] = 0.0


@njit(cache=True)
def _pair_rotation(a, b, z):
    # Unitary 2x2 (c, s, phase) that diagonalises [[a, z], [conj z, b]].
    az = abs(z)
    theta = (b - a) / (2.0 * az)
    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
    if theta < 0.0:
        t = -t
    c = 1.0 / math.sqrt(t * t + 1.0)
    s = t * c
    ph = z / az
    return c, s, ph


@njit(cache=True)
def jacobi_hermitian(a, v, max_sweeps):
    """Cyclic Jacobi diagonalisation of a small Hermitian matrix, in place.

    ``a`` is complex and overwritten by (nearly) diagonal form, ``v``
    accumulates the unitary transformation. Returns sweeps used or -1.
    """
    n = a.shape[0]
    norm2 = 0.0
    for p in range(n):
        for q in range(n):
            norm2 += a[p, q].real ** 2 + a[p, q].imag ** 2
    tiny = 1e-2 * _EPS * math.sqrt(norm2)
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                z = a[p, q]
                if abs(z) <= tiny:
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                rotated = True
                app = a[p, p].real
                aqq = a[q, q].real
                c, s, ph = _pair_rotation(app, aqq, z)
                phc = ph.conjugate()
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * phc * akq
                    a[k, q] = s * akp + c * phc * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * ph * aqk
                    a[q, k] = s * apk + c * ph * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                for k in range(v.shape[0]):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * phc * vkq
                    v[k, q] = s * vkp + c * phc * vkq
        if not rotated:
            return sweep
    return -1


@njit(cache=True)
def one_sided_jacobi(u, v, max_sweeps):
    """Hestenes one-sided Jacobi: orthogonalise the columns of ``u`` in place.

    On exit ``u = M V`` has mutually orthogonal columns whose norms are the
    singular values of the input ``M``; ``v`` accumulates ``V``.
    """
    n = u.shape[1]
    rows = u.shape[0]
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0j
                for k in range(rows):
                    alpha += u[k, p].real ** 2 + u[k, p].imag ** 2
                    beta += u[k, q].real ** 2 + u[k, q].imag ** 2
                    gamma += u[k, p].conjugate() * u[k, q]
                if abs(gamma) <= _EPS * math.sqrt(alpha * beta) or abs(gamma) == 0.0:
                    continue
                rotated = True
                c, s, ph = _pair_rotation(alpha, beta, gamma)
                phc = ph.conjugate()
                for k in range(rows):
                    ukp = u[k, p]
                    ukq = u[k, q]
                    u[k, p] = c * ukp - s * phc * ukq
                    u[k, q] = s * ukp + c * phc * ukq
                for k in range(v.shape[0]):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * phc * vkq
                    v[k, q] = s * vkp + c * phc * vkq
        if not rotated:
            return sweep
    return -1


@njit(cache=True)
def _tridiag_solve_shifted(d, e, shift, b, x, tiny):
    # Gaussian elimination with partial pivoting on (T - shift I) x = b;
    # zero pivots are replaced by ``tiny`` (of order eps * ||T||).
    n = d.shape[0]
    # rows carry up to three nonzeros after pivoting: diag, super, super2
    r0 = np.empty(n)
    r1 = np.empty(n)
    r2 = np.empty(n)
    sub = np.empty(n)
    rhs = b.copy()
    for i in range(n):
        r0[i] = d[i] - shift
        r1[i] = e[i] if i < n - 1 else 0.0
        r2[i] = 0.0
        sub[i] = e[i - 1] if i > 0 else 0.0
    for i in range(n - 1):
        a = sub[i + 1]
        if abs(a) > abs(r0[i]):
            # swap rows i and i+1
            t0, t1, t2, tb = r0[i], r1[i], r2[i], rhs[i]
            r0[i] = a
            r1[i] = r0[i + 1]
            r2[i] = r1[i + 1]
            rhs[i] = rhs[i + 1]
            # old row i shifted into row i+1 positions
            m = t0 / a
            r0[i + 1] = t1 - m * r1[i]
            r1[i + 1] = t2 - m * r2[i]
            rhs[i + 1] = tb - m * rhs[i]
        else:
            piv = r0[i] if abs(r0[i]) >= tiny else (tiny if r0[i] >= 0.0 else -tiny)
            r0[i] = piv
            m = a / piv
            r0[i + 1] = r0[i + 1] - m * r1[i]
            r1[i + 1] = r1[i + 1] - m * r2[i]
            rhs[i + 1] = rhs[i + 1] - m * rhs[i]
    if abs(r0[n - 1]) < tiny:
        r0[n - 1] = tiny if r0[n - 1] >= 0.0 else -tiny
    for i in range(n - 1, -1, -1):
        s = rhs[i]
        if i + 1 < n:
            s -= r1[i] * x[i + 1]
        if i + 2 < n:
            s -= r2[i] * x[i + 2]
        x[i] = s / r0[i]


@njit(cache=True)
def tridiagonal_inverse_iteration(d, e, lams, z, seed_vec, cluster_tol):
    """Eigenvectors of a symmetric tridiagonal matrix for given eigenvalues.

    ``lams`` must be ascending; vectors are written to the rows of ``z``.
    Vectors belonging to eigenvalues closer than ``cluster_tol`` are kept
    mutually orthogonal by Gram-Schmidt inside the iteration.
    """
    n = d.shape[0]
    k = lams.shape[0]
    tnorm = 0.0
    for i in range(n):
        t = abs(d[i]) + (abs(e[i]) if i < n - 1 else 0.0) + (abs(e[i - 1]) if i > 0 else 0.0)
        if t > tnorm:
            tnorm = t
    pert = 10.0 * _EPS * max(tnorm, 1e-300)
    x = np.empty(n)
    y = np.empty(n)
    first = 0
    prev_shift = -np.inf
    for j in range(k):
        if j > 0 and lams[j] - lams[j - 1] > cluster_tol:
            first = j
        shift = lams[j]
        if shift <= prev_shift:
            shift = prev_shift + pert
        prev_shift = shift
        for i in range(n):
            y[i] = seed_vec[(i + 7 * j) % n]
        it = 0
        restarts = 0
        while it < 5:
            _tridiag_solve_shifted(d, e, shift, y, x, pert)
            for q in range(first, j):
                dot = 0.0
                for i in range(n):
                    dot += z[q, i] * x[i]
                for i in range(n):
                    x[i] -= dot * z[q, i]
            nrm = 0.0
            for i in range(n):
                nrm += x[i] * x[i]
            nrm = math.sqrt(nrm)
            if not (nrm > 0.0 and nrm < np.inf) and restarts < n:
                # start vector lay in the span already found: try another
                restarts += 1
                for i in range(n):
                    y[i] = seed_vec[(3 * i + 11 * j + restarts) % n] + (1.0 if i == (j + restarts) % n else 0.0)
                continue
            for i in range(n):
                y[i] = x[i] / nrm
            it += 1
        for i in range(n):
            z[j, i] = y[i]
    return 0
