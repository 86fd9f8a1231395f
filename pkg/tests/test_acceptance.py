"""Acceptance criteria 1 to 8.

Every criterion records one PASS/FAIL line (printed in the terminal
summary) before asserting. Expected values are the published tables of
the method; tolerances are the ones the criteria pin. The preset runs are
shared through a session cache, so criteria 1 to 4 and 7 together solve
each table once (about six minutes on one core).

Run only this file with ``pytest tests/test_acceptance.py -v``.
"""
import math
import time

import numpy as np
import pytest

from conftest import record
from eigencert import fem, linalg
from eigencert import spectral as sp_
from eigencert.certification import guarantee_violations, preset, reproduce
from eigencert.fem.flux import equilibrate_flux, patch_system
from eigencert.fem.reference import AnalyticSquareReference

pytestmark = pytest.mark.slow

C_I = 0.493 / math.sqrt(2)
_TABLES: dict = {}
_TIMES: dict = {}


def tables(T):
    """All blocks of preset table ``T``, computed once per session."""
    if T not in _TABLES:
        t0 = time.perf_counter()
        out = reproduce(T)
        _TIMES[T] = time.perf_counter() - t0
        for tab in out:
            tab.extras.pop("levels", None)  # meshes and solutions are not needed here
        _TABLES[T] = out
    return _TABLES[T]


def within(value, expected, rel):
    return abs(value - expected) <= rel * abs(expected)


def fit_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------- criterion 1

TABLE5_BLOCK1 = {  # N: (Err_lambda, eta^2, I_eff, Err_H1, eta, Err_L2, eta_L2)
    10: (2.81e-06, 2.71e-05, 9.65, 1.72e-03, 5.21e-03, 1.89e-04, 1.68e-03),
    50: (1.18e-09, 1.59e-09, 1.35, 3.44e-05, 3.99e-05, 8.12e-07, 6.91e-06),
    90: (6.39e-11, 7.08e-11, 1.11, 8.00e-06, 8.41e-06, 1.06e-07, 8.94e-07),
    130: (1.02e-11, 1.08e-11, 1.05, 3.20e-06, 3.28e-06, 2.93e-08, 2.48e-07),
}


def test_criterion1_planewave_1d():
    t0 = time.perf_counter()
    table = reproduce(5, blocks=[1])[0]
    elapsed = time.perf_counter() - t0
    bad = []
    for r in table.rows:
        exp = TABLE5_BLOCK1[r.level]
        for name, val, ref, rel in (("Err_lambda", r.err_lambda, exp[0], 0.05),
                                    ("eta^2", r.eta_sq, exp[1], 0.05),
                                    ("I_eff", r.ieff_lambda, exp[2], 0.05),
                                    ("Err_H1", r.err_h1, exp[3], 0.10),
                                    ("eta", r.eta, exp[4], 0.10),
                                    ("Err_L2", r.err_l2, exp[5], 0.10),
                                    ("eta_L2", r.eta_l2, exp[6], 0.10)):
            if not within(val, ref, rel):
                bad.append(f"N={r.level} {name} {val:.4g} vs {ref:.4g}")
    ok = not bad and elapsed < 300
    record(1, ok, f"{len(table.rows)} rows, {len(bad)} off, {elapsed:.0f} s"
           + (f": {bad[:3]}" if bad else ""))
    assert [r.level for r in table.rows] == [10, 50, 90, 130]
    assert not bad
    assert elapsed < 300


# ---------------------------------------------------------------- criterion 2

def test_criterion2_planewave_2d():
    t0 = time.perf_counter()
    table = reproduce(6, blocks=[1])[0]
    elapsed = time.perf_counter() - t0
    r = table.rows[0]
    checks = [within(r.err_lambda, 2.62e-05, 0.10), within(r.eta_sq, 2.02e-04, 0.10),
              within(r.ieff_lambda, 7.70, 0.15), elapsed < 1200]
    record(2, all(checks), f"N=5 Err_lambda {r.err_lambda:.4g}, eta^2 {r.eta_sq:.4g}, "
                           f"I_eff {r.ieff_lambda:.3f}, {elapsed:.0f} s")
    assert r.level == 5
    assert all(checks)


# ---------------------------------------------------------------- criterion 3

TABLE3_BLOCK1 = {40: (0.3351, 0.4661, 1.39), 80: (0.0837, 0.0972, 1.16),
                 160: (0.0209, 0.0231, 1.10), 320: (0.0052, 0.0057, 1.09)}


def test_criterion3_fem_unit_square():
    table = tables(3)[0]
    bad = []
    for r in table.rows:
        err, eta_sq, ieff = TABLE3_BLOCK1[r.level]
        if not within(r.err_lambda, err, 0.02):
            bad.append(f"n={r.level} Err_lambda {r.err_lambda:.4g}")
        if not within(r.eta_sq, eta_sq, 0.10):
            bad.append(f"n={r.level} eta^2 {r.eta_sq:.4g}")
        if not abs(r.ieff_lambda - ieff) <= 0.1:
            bad.append(f"n={r.level} I_eff {r.ieff_lambda:.3f}")
    per_block = _TIMES[3] / len(tables(3))
    ok = not bad and per_block < 600
    record(3, ok, f"4 rows, {len(bad)} off, about {per_block:.0f} s for the block")
    assert [r.level for r in table.rows] == [40, 80, 160, 320]
    assert not bad


# ---------------------------------------------------------------- criterion 4

@pytest.mark.parametrize("T", [3, 4, 5, 6, 7, 8])
def test_criterion4_guarantees(T):
    violations = []
    verified = 0
    for b, tab in enumerate(tables(T), start=1):
        verified += sum("assumptions-failed" not in r.flags for r in tab.rows)
        violations += [f"block {b}: {v}" for v in guarantee_violations(tab)]
    record(4, not violations, f"table {T}: {verified} verified rows, {len(violations)} violations")
    assert verified > 0
    assert not violations


# ---------------------------------------------------------------- criterion 5

GROUPS = ("projector difference identity", "projector distance formulas",
          "norm equivalences", "eigenvalue bracket", "upper and efficiency bounds",
          "residual expansion")
MIN_INSTANCES = 1000


def _instance(rng):
    """Dense SPD operator, exact eigenpairs and Ritz pairs of a perturbed subspace."""
    n = int(rng.integers(6, 15))
    J = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    M = m + J - 1
    lam = np.sort(rng.uniform(1.0, 10.0, n))
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (Q * lam) @ Q.T
    A = 0.5 * (A + A.T)
    nh = int(rng.integers(M + 1, n))
    V, _ = np.linalg.qr(Q[:, :nh] + rng.uniform(0.0, 0.3) * rng.standard_normal((n, nh)))
    w, Z = np.linalg.eigh(V.T @ A @ V)
    X = V @ Z
    return A, lam, Q, m, M, w, X


def _close(a, b, scale=1.0, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(scale))


def test_criterion5_abstract_framework():
    rng = np.random.default_rng(5)
    counts = dict.fromkeys(GROUPS, 0)
    failures = []
    t0 = time.perf_counter()
    draws = 0
    while min(counts.values()) < MIN_INSTANCES and draws < 20000:
        draws += 1
        A, lam_all, Q, m, M, w_all, X = _instance(rng)
        lam, lam_h = lam_all[m - 1:M], w_all[m - 1:M]
        P0, Ph = Q[:, m - 1:M], X[:, m - 1:M]
        G0, Gh = P0 @ P0.T, Ph @ Ph.T
        I = np.eye(A.shape[0])
        wA, VA = np.linalg.eigh(A)
        Ahalf = (VA * np.sqrt(wA)) @ VA.T
        Mo = sp_.OverlapMatrix(P0.T @ Ph)
        dl2 = sp_.dm_l2_distance(Mo)
        de = sp_.dm_energy_distance(lam, lam_h, Mo)
        trA = float(np.trace(A))

        hs = np.linalg.norm(G0 - Gh)
        ok = _close(dl2 ** 2, hs ** 2) and _close(hs ** 2, 2 * np.trace(Gh @ (I - G0)))
        counts[GROUPS[0]] += 1
        if not ok:
            failures.append(f"{GROUPS[0]} #{draws}")

        ok = _close(de ** 2, np.linalg.norm(Ahalf @ (G0 - Gh)) ** 2, trA)
        counts[GROUPS[1]] += 1
        if not ok:
            failures.append(f"{GROUPS[1]} #{draws}")

        _, aligned = sp_.align_subspaces(sp_.SubspaceBasis(Ph), sp_.SubspaceBasis(P0))
        ev = sp_.eigenvector_error_energy(lam, lam_h,
                                          sp_.OverlapMatrix(P0.T @ aligned.vectors))
        ev_dense = np.linalg.norm(Ahalf @ (P0 - aligned.vectors))
        vec_l2 = np.linalg.norm(P0 - aligned.vectors)
        fac = math.sqrt(1.0 + lam[-1] / (4.0 * lam[0]) * dl2 ** 2)
        t = 1e-9
        ok = (_close(ev ** 2, ev_dense ** 2, trA) and dl2 / math.sqrt(2) <= vec_l2 + t
              and vec_l2 <= dl2 + t and de / math.sqrt(2) <= ev + t and ev <= fac * de + t)
        counts[GROUPS[2]] += 1
        if not ok:
            failures.append(f"{GROUPS[2]} #{draws}")

        lo, up = sp_.eigenvalue_sum_bounds(de, dl2, lam[-1])
        s = float(np.sum(lam_h - lam))
        counts[GROUPS[3]] += 1
        if not lo - t <= s <= up + t:
            failures.append(f"{GROUPS[3]} #{draws}")

        R = A @ Ph - Ph * lam_h
        res0 = float(np.trace(R.T @ np.linalg.solve(A, R)))
        res_half = float(np.sum(np.linalg.solve(A, R) ** 2))
        coeff = Q.T @ Ph
        diff2 = (lam_all[:, None] - lam_h[None, :]) ** 2 * coeff ** 2
        ok = (_close(res0, float(np.sum(diff2 / lam_all[:, None])))
              and _close(res_half, float(np.sum(diff2 / lam_all[:, None] ** 2))))
        counts[GROUPS[5]] += 1
        if not ok:
            failures.append(f"{GROUPS[5]} #{draws}")

        # bounds needing the gap assumptions, with exact neighbours as the bounds
        gaps = sp_.GapBounds(lower_next=float(lam_all[M]),
                             upper_prev=float(w_all[m - 2]) if m > 1 else None,
                             lower_first=float(lam_all[0]))
        if m > 1 and not lam_all[m - 2] <= w_all[m - 2]:
            continue
        if not sp_.verify_gap_assumptions(w_all, m, M, gaps):
            continue
        c = sp_.compute_constants(lam_h, gaps, m)
        rel = 1 + 1e-9
        ok = (de ** 2 <= sp_.energy_bound_crude(res0, dl2 ** 2, lam[-1], lam_h[-1]) * rel + 1e-12
              and de ** 2 <= sp_.energy_bound_upper(res0, dl2 ** 2, c.c_h, lam[-1]) * rel + 1e-12
              and dl2 <= sp_.l2_bound_from_weak_residual(math.sqrt(res_half), c.c_h) * rel + 1e-12
              and dl2 <= sp_.l2_bound_from_residual(math.sqrt(res0), c.c_tilde_h) * rel + 1e-12
              and res0 <= sp_.residual_lower_bound_rhs(de ** 2, dl2 ** 2, c.c_bar_h, lam[0],
                                                       lam[-1]) * rel + 1e-12)
        counts[GROUPS[4]] += 1
        if not ok:
            failures.append(f"{GROUPS[4]} #{draws}")
    elapsed = time.perf_counter() - t0
    enough = min(counts.values()) >= MIN_INSTANCES
    record(5, enough and not failures and elapsed < 120,
           f"min {min(counts.values())} instances per group, {len(failures)} failures, "
           f"{elapsed:.0f} s")
    assert enough, counts
    assert not failures, failures[:5]
    assert elapsed < 120


# ---------------------------------------------------------------- criterion 6

def _null_space_minimiser(sys):
    s0 = np.linalg.lstsq(sys.B, sys.g, rcond=None)[0]
    _, sv, Vt = np.linalg.svd(sys.B)
    Z = Vt[int(np.sum(sv > 1e-12 * sv[0])):].T
    y = np.linalg.solve(Z.T @ sys.A @ Z, Z.T @ (sys.f - sys.A @ s0))
    return s0 + Z @ y


def test_criterion6_flux_suite():
    rng = np.random.default_rng(6)
    meshes = [("square", n, fem.mesh_square_uniform(n)) for n in (3, 4, 8, 12, 16, 20)]
    meshes += [("lshape", n, fem.mesh_lshape(n)) for n in (4, 8, 12, 20)]
    worst = dict(div=0.0, compat=0.0, jump=0.0, qp=0.0)
    patches = 0
    for _, n, mesh in meshes:
        S = fem.assemble_p1(mesh)
        J = min(2, S.n_interior - 1)
        sol = fem.fem_solve_cluster(S, 1, J)
        flux = equilibrate_flux(mesh, sol.nodal, sol.rayleigh)
        worst["div"] = max(worst["div"], flux.divergence_defect)
        worst["compat"] = max(worst["compat"], flux.compatibility)
        jumps = flux.space.normal_trace_jumps(flux.coefficients)
        worst["jump"] = max(worst["jump"], float(np.max(np.abs(jumps))))
        k = min(mesh.n_vertices, 12)
        for v in rng.choice(mesh.n_vertices, size=k, replace=False):
            sys, _ = patch_system(mesh, int(v), sol.nodal[:, 0], sol.rayleigh[0])
            sigma, _ = linalg.solve_saddle(sys)
            oracle = _null_space_minimiser(sys)
            scale = max(1.0, float(np.abs(oracle).max()))
            worst["qp"] = max(worst["qp"], float(np.abs(sigma - oracle).max()) / scale)
            patches += 1
    ok = (worst["div"] <= 1e-9 and worst["compat"] <= 1e-10 and worst["jump"] <= 1e-9
          and worst["qp"] <= 1e-9)
    record(6, ok, f"{len(meshes)} meshes up to n=20, {patches} patch QPs; worst divergence "
                  f"{worst['div']:.1e}, compatibility {worst['compat']:.1e}, "
                  f"normal jump {worst['jump']:.1e}, QP gap {worst['qp']:.1e}")
    assert ok, worst


# ---------------------------------------------------------------- criterion 7

TABLE4_TAIL = ((5734, 0.1503), (22001, 0.0436), (86787, 0.0132))  # last rows, T_H,2 block


def _uniform_table():
    return tables(4)[1]  # lower bound 39.1209


def _tail(table, k=3):
    ndof = table.column("ndof")[-k:]
    return ndof, table.column("err_lambda")[-k:]


@pytest.mark.xfail(strict=True, reason="uniform slope is about -0.95, as in the published "
                                       "table itself; -2/3 is not observed (see ledger)")
def test_criterion7_uniform_slope():
    slope = fit_slope(*_tail(_uniform_table()))
    ok = abs(slope - (-2 / 3)) <= 0.15 * 2 / 3
    record(7, ok, f"uniform Err_lambda slope {slope:.3f} (target -0.667 +- 15%)")
    assert ok


def test_criterion7_uniform_slope_matches_published_data():
    slope = fit_slope(*_tail(_uniform_table()))
    published = fit_slope(*zip(*TABLE4_TAIL))
    ok = within(slope, published, 0.15)
    record(7, ok, f"uniform slope vs published rows {published:.3f}")
    assert ok


def test_criterion7_adaptive_trends():
    table = tables(8)[0]
    ndof, err = table.column("ndof"), table.column("err_lambda")
    half = len(ndof) // 2
    slope = fit_slope(ndof[half:], err[half:])
    final_ieff = float(table.rows[-1].ieff_lambda)
    checks = {"slope": abs(slope + 1.0) <= 0.15,
              "final I_eff": 65.69 / 2 <= final_ieff <= 65.69 * 2}
    record(7, all(checks.values()),
           f"adaptive slope {slope:.3f}, final I_eff {final_ieff:.2f} over {len(ndof)} levels")
    assert all(checks.values()), checks


def test_criterion7_l2_effectivity_grows():
    grows = {}
    for name, table in (("uniform", _uniform_table()), ("adaptive", tables(8)[0])):
        rows = [r for r in table.rows if "assumptions-failed" not in r.flags]
        ndof = np.array([r.ndof for r in rows], dtype=float)
        ieff = np.array([r.ieff_l2 for r in rows], dtype=float)
        grows[name] = bool(fit_slope(ndof, ieff) > 0 and ieff[-1] > ieff[0])
    record(7, all(grows.values()), f"eta_L2 effectivity grows with ndof: {grows}")
    assert all(grows.values())


# ---------------------------------------------------------------- criterion 8

def test_criterion8_degenerate_pair_rotation():
    sol = fem.fem_solve_cluster(fem.assemble_p1(fem.mesh_square_uniform(40)), 2, 3)
    ref = AnalyticSquareReference()

    def report(s):
        e2 = fem.fem_estimate(s, 73.9444, case="II", delta=1.0, C_I=C_I, C_S=1.0)
        e1 = fem.fem_estimate(s, 73.9444, case="I")
        return np.array(ref.errors(s) + (e2.eta_sq, e2.eta, e2.eta_l2,
                                         e1.eta_sq, e1.eta, e1.eta_l2))

    base = report(sol)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(10):
        U, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        worst = max(worst, float(np.max(np.abs(report(sol.rotated(U)) - base) / np.abs(base))))
    record(8, worst < 1e-9, f"max relative change {worst:.1e} over 10 remixings, 9 quantities")
    assert worst < 1e-9


def test_preset_battery_is_complete():
    # criterion 4 covers every block of every preset
    assert sum(len(preset(T)) for T in range(3, 9)) == 16


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
