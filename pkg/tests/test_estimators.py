import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eigencert import fem
from eigencert.errors import CaseIIWithoutConstants

C_I = 0.493 / math.sqrt(2)


def test_dorfler_single_carrier():
    eta = np.zeros(10)
    eta[4] = 2.0
    assert fem.dorfler_mark(eta, 0.6).tolist() == [4]


def test_dorfler_uniform_theta_squared():
    assert len(fem.dorfler_mark(np.ones(100), 0.6)) == 36


def test_dorfler_exponent_one():
    assert len(fem.dorfler_mark(np.ones(100), 0.6, exponent=1.0)) == 60


def test_dorfler_near_one_takes_all_nonzero():
    eta = np.array([0.0, 1.0, 2.0, 0.0, 3.0])
    assert fem.dorfler_mark(eta, 1 - 1e-12).tolist() == [1, 2, 4]


def test_dorfler_ties_by_index():
    assert fem.dorfler_mark(np.array([1.0, 1.0, 1.0, 1.0]), 0.5).tolist() == [0]


@pytest.mark.parametrize("theta", [0.0, 1.0, -0.1])
def test_dorfler_rejects_theta(theta):
    with pytest.raises(ValueError):
        fem.dorfler_mark(np.ones(3), theta)


@given(eta=st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=40),
       theta=st.floats(0.05, 0.95))
def test_dorfler_minimal_greedy(eta, theta):
    eta = np.array(eta)
    marked = fem.dorfler_mark(eta, theta)
    total = eta.sum()
    if total == 0:
        assert marked.size == 0
        return
    target = theta ** 2 * total
    assert eta[marked].sum() >= target * (1 - 1e-12)
    # no smaller set reaches the target: the best set of size k-1 misses it
    best_smaller = np.sort(eta)[::-1][:len(marked) - 1].sum()
    assert best_smaller < target * (1 + 1e-12)


def test_estimators_zero_residual_both_cases():
    assert fem.fem_estimators(0.0, 2.0, 1.0, 10.0) == (0.0, 0.0)
    assert fem.fem_estimators(0.0, 2.0, 1.0, 10.0, case="II", h=0.1, delta=1.0, C_I=C_I,
                              C_S=1.0) == (0.0, 0.0)


def test_case_one_formula():
    eta_sq, eta_l2 = fem.fem_estimators(0.5, 2.0, 0.3, 10.0, case="I")
    assert eta_sq == pytest.approx((2 * 4 + 2 * 10 * 0.3 ** 4 * 0.5) * 0.5)
    assert eta_l2 == pytest.approx(math.sqrt(2) * 0.3 * math.sqrt(0.5))


def test_case_two_formula():
    eta_sq, eta_l2 = fem.fem_estimators(0.5, 2.0, 0.3, 10.0, case="II", h=0.1, delta=1.0,
                                        C_I=C_I, C_S=1.0)
    f = 2.0 * C_I * 0.1
    assert eta_sq == pytest.approx((1 + 4 * 10 * f ** 2) * 0.5)
    assert eta_l2 == pytest.approx(math.sqrt(2) * f * math.sqrt(0.5))


def test_case_two_needs_constants():
    with pytest.raises(CaseIIWithoutConstants):
        fem.fem_estimators(1.0, 1.0, 1.0, 1.0, case="II", h=0.1, delta=1.0, C_I=C_I)
    sol = fem.fem_solve_cluster(fem.assemble_p1(fem.mesh_square_uniform(4)), 1, 1)
    with pytest.raises(CaseIIWithoutConstants):
        fem.fem_estimate(sol, 40.0, case="II", delta=1.0)


def test_local_indicators_sum_to_case_one_estimator():
    mesh = fem.mesh_lshape(6)
    sol = fem.fem_solve_cluster(fem.assemble_p1(mesh), 3, 5)
    est = fem.fem_estimate(sol, 39.1209, case="I")
    eta, flags = fem.element_indicators(est, sol)
    assert not flags
    assert eta.sum() == pytest.approx(est.eta_sq, rel=1e-12)


def test_gap_failure_is_soft():
    sol = fem.fem_solve_cluster(fem.assemble_p1(fem.mesh_lshape(3)), 3, 5)
    assert sol.rayleigh[-1] > 34.0774
    est = fem.fem_estimate(sol, 34.0774, case="I")
    assert not est.verdict
    assert math.isnan(est.eta_sq)
    _, flags = fem.element_indicators(est, sol)
    assert flags == ["assumptions-failed"]


def test_square_case_two_row():
    mesh = fem.mesh_square_uniform(40)
    sol = fem.fem_solve_cluster(fem.assemble_p1(mesh), 2, 3)
    est = fem.fem_estimate(sol, 73.9444, case="II", delta=1.0, C_I=C_I, C_S=1.0)
    assert est.verdict
    assert est.eta_sq == pytest.approx(0.4661, rel=0.10)


def test_indicator_export(tmp_path):
    mesh = fem.mesh_square_uniform(2)
    fem.export_indicators(mesh, np.arange(mesh.n_triangles, dtype=float), tmp_path / "eta.csv")
    lines = (tmp_path / "eta.csv").read_text().splitlines()
    assert lines[0] == "element,x,y,indicator"
    assert len(lines) == mesh.n_triangles + 1
