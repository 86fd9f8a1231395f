"""Built-in property suites run by ``eigencert verify``.

Each suite draws random or small structured instances, compares library
results with dense oracles or checks the inequalities the bounds rely
on, and records every failure. They are quick sanity checks of an
installation; the test suite covers the same ground in more depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem, linalg, spectral
from . import planewave as pw
from .linalg import DEFAULT_SEED, make_rng


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def check(self, ok: bool, what: str) -> None:
        self.checks += 1
        if not ok:
            self.failures.append(what)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"{status} {self.name}: {self.checks} checks"
        if self.failures:
            shown = "; ".join(self.failures[:5])
            line += f", {len(self.failures)} failed ({shown})"
        return line


def random_galerkin_instance(rng, n_range=(6, 14), max_J=3, noise=0.3):
    """Dense SPD operator with known eigenpairs and a Ritz approximation.

    The Galerkin space is a random perturbation of the span of the lowest
    exact eigenvectors, so the Ritz values bound the exact ones from above.

    Returns a dict with the operator ``A``, exact values/vectors, the cluster
    ``(m, M)`` and the Ritz values/vectors of the cluster.
    """
    n = int(rng.integers(*n_range))
    J = int(rng.integers(1, max_J + 1))
    m = int(rng.integers(1, 3))
    M = m + J - 1
    lam = np.sort(rng.uniform(1.0, 10.0, n))
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (Q * lam) @ Q.T
    A = 0.5 * (A + A.T)
    nh = int(rng.integers(M + 1, n))
    V = Q[:, :nh] + rng.uniform(0.0, noise) * rng.standard_normal((n, nh))
    V, _ = np.linalg.qr(V)
    w, Z = np.linalg.eigh(V.T @ A @ V)
    X = V @ Z
    return {"A": A, "lam": lam, "Q": Q, "m": m, "M": M, "J": J,
            "exact_vals": lam[m - 1:M], "exact_vecs": Q[:, m - 1:M],
            "ritz_vals": w[m - 1:M], "ritz_vecs": X[:, m - 1:M], "ritz_all": w}


def _sqrtm_spd(A):
    w, V = np.linalg.eigh(A)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def suite_spectral(instances: int, seed: int) -> SuiteResult:
    res = SuiteResult("spectral-core identities and inequalities")
    rng = make_rng(seed)
    for it in range(instances):
        inst = random_galerkin_instance(rng)
        A, P0, Ph = inst["A"], inst["exact_vecs"], inst["ritz_vecs"]
        lam, lam_h = inst["exact_vals"], inst["ritz_vals"]
        Mo = spectral.OverlapMatrix(P0.T @ Ph)
        G0, Gh = P0 @ P0.T, Ph @ Ph.T
        dl2 = spectral.dm_l2_distance(Mo)
        de = spectral.dm_energy_distance(lam, lam_h, Mo)
        res.check(abs(dl2 - np.linalg.norm(G0 - Gh)) <= 1e-10, f"projector identity #{it}")
        Ahalf = _sqrtm_spd(A)
        oracle = np.linalg.norm(Ahalf @ (G0 - Gh))
        res.check(abs(de ** 2 - oracle ** 2) <= 1e-9 * max(1.0, np.trace(A)),
                  f"energy distance #{it}")
        U, aligned = spectral.align_subspaces(spectral.SubspaceBasis(Ph), spectral.SubspaceBasis(P0))
        Ma = spectral.OverlapMatrix(P0.T @ aligned.vectors)
        ev = spectral.eigenvector_error_energy(lam, lam_h, Ma)
        ev_oracle = np.linalg.norm(Ahalf @ (P0 - aligned.vectors))
        res.check(abs(ev ** 2 - ev_oracle ** 2) <= 1e-9 * max(1.0, np.trace(A)),
                  f"aligned energy error #{it}")
        vec_l2 = np.linalg.norm(P0 - aligned.vectors)
        tol = 1e-9
        res.check(dl2 / math.sqrt(2) <= vec_l2 + tol and vec_l2 <= dl2 + tol,
                  f"L2 norm equivalence #{it}")
        fac = math.sqrt(1.0 + lam[-1] / (4.0 * lam[0]) * dl2 ** 2)
        res.check(de / math.sqrt(2) <= ev + tol and ev <= fac * de + tol,
                  f"energy norm equivalence #{it}")
        lo, up = spectral.eigenvalue_sum_bounds(de, dl2, lam_h[-1])
        s = float(np.sum(lam_h - lam))
        res.check(s >= -1e-9 and lo - 1e-9 <= s <= up + 1e-9, f"eigenvalue bracket #{it}")
        R = A @ Ph - Ph * lam_h
        res_sq = float(np.trace(R.T @ np.linalg.solve(A, R)))
        coeff = inst["Q"].T @ Ph
        expansion = float(np.sum((inst["lam"][:, None] - lam_h[None, :]) ** 2 / inst["lam"][:, None]
                                 * coeff ** 2))
        res.check(abs(res_sq - expansion) <= 1e-9 * max(1.0, expansion), f"residual sum #{it}")
        c_bar = max((lam_h[-1] / inst["lam"][0] - 1.0) ** 2, 1.0)
        rhs = spectral.residual_lower_bound_rhs(de ** 2, dl2 ** 2, c_bar, lam[0], lam[-1])
        res.check(res_sq <= rhs * (1 + 1e-9) + 1e-12, f"residual ceiling #{it}")
    return res


def suite_linalg(instances: int, seed: int) -> SuiteResult:
    res = SuiteResult("linalg kernels")
    rng = make_rng(seed + 1)
    for it in range(max(1, instances // 10)):
        n = int(rng.integers(2, 30))
        A = rng.standard_normal((n, n))
        A = A + A.T
        C = rng.standard_normal((n, n))
        B = C @ C.T + n * np.eye(n)
        w, V = linalg.dense_eig(A, B)
        res.check(np.allclose(A @ V, (B @ V) * w, atol=1e-9 * max(1, np.abs(A).max())),
                  f"generalized eigen residual #{it}")
        res.check(np.allclose(V.T @ B @ V, np.eye(n), atol=1e-9), f"B-orthonormality #{it}")
        nv, nq = n + 2, max(1, n // 2)
        S = rng.standard_normal((nv, nv))
        S = S @ S.T + nv * np.eye(nv)
        Bc = rng.standard_normal((nq, nv))
        f, g = rng.standard_normal(nv), rng.standard_normal(nq)
        x, p = linalg.solve_saddle(linalg.SaddleSystem(S, Bc, f, g))
        K = np.block([[S, Bc.T], [Bc, np.zeros((nq, nq))]])
        ref = np.linalg.solve(K, np.concatenate([f, g]))
        res.check(np.allclose(np.concatenate([x, p]), ref, atol=1e-8), f"saddle solve #{it}")
    return res


def suite_planewave(seed: int) -> SuiteResult:
    res = SuiteResult("planewave bounds")
    pot = pw.build_potential(1, 1.0, 80)
    ref = pw.pw_solve_cluster(pw.PWBasis(1, 40), pot, 2, 3, seed=seed)
    ref_est = pw.pw_estimate(ref)
    sup_V = float(pot.sample().max())
    for N in (6, 10, 14):
        sol = pw.pw_solve_cluster(pw.PWBasis(1, N), pot, 2, 3, seed=seed)
        est = pw.pw_estimate(sol)
        el, eh, e2 = pw.pw_reference_errors(ref, sol)
        res.check(bool(est.verdict), f"gap assumptions N={N}")
        res.check(el <= est.eta_sq + ref_est.eta_sq + 1e-12, f"Err_lambda <= eta^2 at N={N}")
        res.check(eh <= est.eta + ref_est.eta + 1e-12, f"Err_H1 <= eta at N={N}")
        res.check(e2 <= est.eta_l2 + ref_est.eta_l2 + 1e-12, f"Err_L2 <= eta_L2 at N={N}")
        c_bar = est.constants.c_bar_h
        ceiling = sup_V * spectral.residual_lower_bound_rhs(eh ** 2, e2 ** 2, c_bar,
                                                            ref.rayleigh[0], ref.rayleigh[-1])
        res.check(est.eta_res_sq <= ceiling, f"efficiency ceiling at N={N}")
    return res


def suite_fem(seed: int) -> SuiteResult:
    res = SuiteResult("finite element flux and bounds")
    rng = make_rng(seed + 2)
    mesh = fem.mesh_square_uniform(8)
    sol = fem.fem_solve_cluster(fem.assemble_p1(mesh), 2, 3, seed=seed)
    est = fem.fem_estimate(sol, 73.9444, case="II", delta=1.0, C_I=0.493 / math.sqrt(2), C_S=1.0)
    flux = est.flux
    res.check(flux.divergence_defect <= 1e-9, "divergence constraint")
    res.check(flux.compatibility <= 1e-10, "patch compatibility")
    jumps = flux.space.normal_trace_jumps(flux.coefficients)
    res.check(float(np.max(np.abs(jumps))) <= 1e-9, "normal trace continuity")
    el, eh, e2 = fem.AnalyticSquareReference().errors(sol)
    res.check(el <= est.eta_sq and eh <= est.eta and e2 <= est.eta_l2, "square case II guarantee")
    m = fem.mesh_lshape(2)
    for it in range(5):
        marked = rng.choice(m.n_triangles, size=max(1, m.n_triangles // 5), replace=False)
        m = fem.refine_nvb(m, marked)
        res.check(m.check_conforming(), f"NVB conformity step {it}")
    res.check(abs(m.areas.sum() - 3.0) <= 1e-12, "NVB preserves area")
    return res


def suite_certification(seed: int) -> SuiteResult:
    from .certification import ExperimentConfig, ResultTable, run_ladder
    res = SuiteResult("result table round trip")
    cfg = ExperimentConfig("pw", "torus-1d", 1, 1, ladder=(4, 6), reference="fine:20",
                           alpha=0.5, seed=seed)
    table = run_ladder(cfg)
    again = ResultTable.from_csv(table.to_csv(precise=True))
    res.check(again.same_values(table), "precise CSV round trip")
    res.check(run_ladder(cfg).to_csv() == table.to_csv(), "byte-identical rerun")
    return res


def run_all(instances: int = 200, seed: int | None = None) -> list[SuiteResult]:
    """Run every suite; ``instances`` random cases per spectral identity."""
    seed = DEFAULT_SEED if seed is None else int(seed)
    return [suite_spectral(instances, seed), suite_linalg(instances, seed),
            suite_planewave(seed), suite_fem(seed), suite_certification(seed)]
