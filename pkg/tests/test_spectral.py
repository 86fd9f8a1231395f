import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eigencert import spectral
from eigencert.errors import (DimensionMismatch, GapViolation, NegativeRadicand,
                              RankDeficientOverlap)
from eigencert.spectral import (EigenCluster, GapBounds, OverlapMatrix, SubspaceBasis)
from eigencert.verification import random_galerkin_instance

from conftest import random_frame, random_orthogonal


def _projector(P):
    return P @ P.conj().T


def _sqrtm(A):
    w, V = np.linalg.eigh(A)
    return (V * np.sqrt(np.maximum(w, 0))) @ V.T


# -------------------------------------------------------------- data types

def test_cluster_bookkeeping():
    c = EigenCluster(2, 4, [1.0, 2.0, 2.0])
    assert c.J == 3
    assert np.arange(10)[c.indices].tolist() == [1, 2, 3]


@pytest.mark.parametrize("m, M, values", [(0, 1, [1.0, 2.0]), (2, 1, []), (1, 2, [2.0, 1.0]),
                                          (1, 1, [-1.0])])
def test_cluster_rejects_bad_input(m, M, values):
    with pytest.raises((ValueError, DimensionMismatch)):
        EigenCluster(m, M, values)


def test_subspace_basis_requires_orthonormal_frame():
    with pytest.raises(ValueError):
        SubspaceBasis(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_subspace_basis_with_metric(rng):
    G = np.diag([2.0, 3.0, 5.0])
    V = np.diag(1 / np.sqrt([2.0, 3.0, 5.0]))[:, :2]
    assert SubspaceBasis(V, metric=G).J == 2


# --------------------------------------------------------- gap assumptions

def test_gap_verdict_synthetic_ok():
    lam = (9.9, 49.5, 49.6, 80.1)
    assert spectral.verify_gap_assumptions(lam, 2, 3, GapBounds(73.9444))


def test_gap_verdict_violated_names_inequality():
    v = spectral.verify_gap_assumptions((1.0, 2.0), 1, 1, GapBounds(0.9))
    assert not v.ok
    assert "lower_next" in v.reason


def test_gap_verdict_never_raises_on_short_spectrum():
    assert not spectral.verify_gap_assumptions((1.0,), 1, 2, GapBounds(5.0))


def test_constants_first_cluster():
    c = spectral.compute_constants([1.0], GapBounds(2.0, lower_first=1.0), m=1)
    assert c.c_h == pytest.approx(2.0)
    assert c.c_tilde_h == pytest.approx(2 / math.sqrt(2), rel=1e-12)
    assert c.c_bar_h == pytest.approx(1.0)


def test_constants_inner_cluster_takes_max():
    c = spectral.compute_constants([5.0, 5.0], GapBounds(10.0, upper_prev=4.0), m=2)
    assert c.c_h == pytest.approx(4.0)


def test_constants_reject_closed_gap():
    with pytest.raises(GapViolation):
        spectral.compute_constants([2.0], GapBounds(2.0), m=1)


@given(t=st.floats(0.01, 100.0))
def test_constants_scaling_units(t):
    lam = np.array([5.0, 5.5])
    gaps = GapBounds(9.0, upper_prev=3.0, lower_first=1.0)
    base = spectral.compute_constants(lam, gaps, m=2)
    scaled = spectral.compute_constants(t * lam, GapBounds(9.0 * t, 3.0 * t, 1.0 * t), m=2)
    assert scaled.c_h == pytest.approx(base.c_h, rel=1e-10)
    assert scaled.c_bar_h == pytest.approx(base.c_bar_h, rel=1e-10)
    assert scaled.c_tilde_h == pytest.approx(base.c_tilde_h * t ** -0.5, rel=1e-10)


# ------------------------------------------------------------- alignment

def test_align_identical_frames(rng):
    P = random_frame(rng, 6, 2)
    U, aligned = spectral.align_subspaces(SubspaceBasis(P), SubspaceBasis(P))
    np.testing.assert_allclose(U, np.eye(2), atol=1e-12)
    assert np.linalg.norm(aligned.vectors - P) < 1e-12


def test_align_swapped_columns(rng):
    P = random_frame(rng, 6, 2)
    U, aligned = spectral.align_subspaces(SubspaceBasis(P[:, ::-1]), SubspaceBasis(P))
    np.testing.assert_allclose(np.abs(U), [[0, 1], [1, 0]], atol=1e-12)
    assert np.linalg.norm(aligned.vectors - P) < 1e-12


def test_align_matches_brute_force_over_o2(rng):
    P0 = random_frame(rng, 6, 2)
    Ph = random_frame(rng, 6, 2)
    _, aligned = spectral.align_subspaces(SubspaceBasis(Ph), SubspaceBasis(P0))
    best = np.linalg.norm(aligned.vectors - P0)
    angles = np.linspace(0, 2 * np.pi, 20001)
    brute = np.inf
    for refl in (1.0, -1.0):
        c, s = np.cos(angles), np.sin(angles)
        for a, b in zip(c, s):
            R = np.array([[a, -refl * b], [b, refl * a]])
            brute = min(brute, np.linalg.norm(Ph @ R - P0))
    assert abs(best - brute) < 1e-7


def test_aligned_overlap_is_symmetric_psd(rng):
    P0, Ph = random_frame(rng, 9, 3), random_frame(rng, 9, 3)
    _, aligned = spectral.align_subspaces(SubspaceBasis(Ph), SubspaceBasis(P0))
    K = P0.T @ aligned.vectors
    assert np.max(np.abs(K - K.T)) < 1e-9
    assert np.linalg.eigvalsh(0.5 * (K + K.T)).min() > -1e-9


@given(seed=st.integers(0, 2 ** 31))
def test_align_is_optimal_against_perturbations(seed):
    r = np.random.default_rng(seed)
    P0, Ph = random_frame(r, 7, 3), random_frame(r, 7, 3)
    U, aligned = spectral.align_subspaces(SubspaceBasis(Ph), SubspaceBasis(P0))
    best = np.linalg.norm(aligned.vectors - P0)
    for _ in range(10):
        Up = U @ random_orthogonal(r, 3)
        assert np.linalg.norm(Ph @ Up - P0) >= best - 1e-9


def test_align_complex_frames_unitary(rng):
    P0 = random_frame(rng, 8, 2, complex_=True)
    phase = np.diag(np.exp(1j * np.array([0.3, -1.1])))
    U, aligned = spectral.align_subspaces(SubspaceBasis(P0 @ phase), SubspaceBasis(P0))
    np.testing.assert_allclose(U.conj().T @ U, np.eye(2), atol=1e-12)
    assert np.linalg.norm(aligned.vectors - P0) < 1e-12


def test_align_rank_deficient_overlap(rng):
    Q = random_frame(rng, 6, 4)
    with pytest.raises(RankDeficientOverlap):
        spectral.align_subspaces(SubspaceBasis(Q[:, :2]), SubspaceBasis(Q[:, 2:]))


# --------------------------------------------------------------- overlaps

def test_overlap_identity_and_orthogonal(rng):
    Q = random_frame(rng, 6, 4)
    np.testing.assert_allclose(spectral.overlap(SubspaceBasis(Q[:, :2]),
                                                SubspaceBasis(Q[:, :2])).entries,
                               np.eye(2), atol=1e-12)
    np.testing.assert_allclose(spectral.overlap(SubspaceBasis(Q[:, :2]),
                                                SubspaceBasis(Q[:, 2:])).entries,
                               np.zeros((2, 2)), atol=1e-12)


def test_overlap_angle():
    th = 0.7
    a = SubspaceBasis(np.array([1.0, 0.0]))
    b = SubspaceBasis(np.array([math.cos(th), math.sin(th)]))
    assert spectral.overlap(a, b).entries[0, 0] == pytest.approx(math.cos(th))


def test_overlap_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        spectral.overlap(SubspaceBasis(random_frame(rng, 4, 1)),
                         SubspaceBasis(random_frame(rng, 5, 1)))


# ------------------------------------------------------------- distances

def test_dm_l2_trivial_values():
    assert spectral.dm_l2_distance(OverlapMatrix(np.eye(3))) == 0.0
    assert spectral.dm_l2_distance(OverlapMatrix(np.zeros((1, 1)))) == pytest.approx(math.sqrt(2))


def test_dm_l2_negative_radicand():
    with pytest.raises(NegativeRadicand):
        spectral.dm_l2_distance(OverlapMatrix(2 * np.eye(2)))


@given(seed=st.integers(0, 2 ** 31), J=st.integers(1, 3), complex_=st.booleans())
def test_dm_l2_matches_projector_oracle(seed, J, complex_):
    r = np.random.default_rng(seed)
    P0, Ph = random_frame(r, 8, J, complex_), random_frame(r, 8, J, complex_)
    Mo = spectral.overlap(SubspaceBasis(P0), SubspaceBasis(Ph))
    oracle = np.linalg.norm(_projector(P0) - _projector(Ph))
    assert abs(spectral.dm_l2_distance(Mo) - oracle) < 1e-10


def test_dm_energy_trivial_values():
    assert spectral.dm_energy_distance([1.0, 2.0], [1.0, 2.0], OverlapMatrix(np.eye(2))) == 0.0
    assert spectral.dm_energy_distance([1.0], [1.0], OverlapMatrix(np.zeros((1, 1)))) == \
        pytest.approx(math.sqrt(2))


@given(seed=st.integers(0, 2 ** 31))
def test_dm_energy_matches_dense_oracle(seed):
    inst = random_galerkin_instance(np.random.default_rng(seed))
    P0, Ph = inst["exact_vecs"], inst["ritz_vecs"]
    Mo = OverlapMatrix(P0.T @ Ph)
    de = spectral.dm_energy_distance(inst["exact_vals"], inst["ritz_vals"], Mo)
    oracle = np.linalg.norm(_sqrtm(inst["A"]) @ (_projector(P0) - _projector(Ph)))
    assert de == pytest.approx(oracle, rel=1e-8, abs=1e-10)


def test_eigenvector_error_single_angle():
    th = 0.4
    M = OverlapMatrix(np.array([[math.cos(th)]]))
    assert spectral.eigenvector_error_energy([1.0], [1.0], M) == \
        pytest.approx(math.sqrt(2 * (1 - math.cos(th))))
    assert spectral.eigenvector_error_energy([3.0], [3.0], OverlapMatrix(np.eye(1))) == 0.0


@given(seed=st.integers(0, 2 ** 31))
def test_norm_equivalences(seed):
    inst = random_galerkin_instance(np.random.default_rng(seed))
    P0, Ph = inst["exact_vecs"], inst["ritz_vecs"]
    lam, lam_h = inst["exact_vals"], inst["ritz_vals"]
    dl2 = spectral.dm_l2_distance(OverlapMatrix(P0.T @ Ph))
    de = spectral.dm_energy_distance(lam, lam_h, OverlapMatrix(P0.T @ Ph))
    _, al = spectral.align_subspaces(SubspaceBasis(Ph), SubspaceBasis(P0))
    vec = np.linalg.norm(P0 - al.vectors)
    ev = spectral.eigenvector_error_energy(lam, lam_h, OverlapMatrix(P0.T @ al.vectors))
    assert dl2 / math.sqrt(2) <= vec + 1e-9 and vec <= dl2 + 1e-9
    fac = math.sqrt(1 + lam[-1] / (4 * lam[0]) * dl2 ** 2)
    assert de / math.sqrt(2) <= ev + 1e-9 and ev <= fac * de + 1e-9


# ----------------------------------------------------------------- bounds

def test_eigenvalue_sum_bounds_examples():
    assert spectral.eigenvalue_sum_bounds(0.0, 0.0, 5.0) == (0.0, 0.0)
    assert spectral.eigenvalue_sum_bounds(1.0, 0.0, 5.0) == (1.0, 1.0)


def test_eigenvalue_sum_bracket_dense_instance(rng):
    n = 10
    lam = np.arange(1.0, n + 1)
    Q = random_orthogonal(rng, n)
    A = (Q * lam) @ Q.T
    V, _ = np.linalg.qr(Q[:, :5] + 0.1 * rng.standard_normal((n, 5)))
    w, Z = np.linalg.eigh(V.T @ A @ V)
    Ph = (V @ Z)[:, 1:3]
    Mo = OverlapMatrix(Q[:, 1:3].T @ Ph)
    de = spectral.dm_energy_distance(lam[1:3], w[1:3], Mo)
    dl2 = spectral.dm_l2_distance(Mo)
    lo, up = spectral.eigenvalue_sum_bounds(de, dl2, w[2])
    s = np.sum(w[1:3] - lam[1:3])
    assert lo - 1e-12 <= s <= up + 1e-12


def test_effectivity_noise_floor():
    assert spectral.effectivity(1.0, 0.0) == "n/a"
    assert spectral.effectivity(1.0, 1e-15) == "n/a"
    assert spectral.effectivity(0.4661, 0.3351) == pytest.approx(1.39, abs=0.005)


def test_frame_distances_agree_with_overlap_formulas(rng):
    inst = random_galerkin_instance(rng)
    P0, Ph, A = inst["exact_vecs"], inst["ritz_vecs"], inst["A"]
    Mo = OverlapMatrix(P0.T @ Ph)
    l2, en = spectral.frame_distances(P0, inst["exact_vals"], Ph, lambda X: A @ X)
    assert l2 == pytest.approx(spectral.dm_l2_distance(Mo), rel=1e-8)
    assert en == pytest.approx(spectral.dm_energy_distance(inst["exact_vals"], inst["ritz_vals"], Mo),
                               rel=1e-8)


def test_efficiency_rhs_zero_limit():
    assert spectral.residual_lower_bound_rhs(0.0, 0.0, 1.0, 1.0, 2.0) == 0.0
