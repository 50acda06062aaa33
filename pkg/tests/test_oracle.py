import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchstream.oracle import (
    ExactDistribution,
    SizeGuardError,
    UndefinedDistribution,
    best_rank_k_error,
    best_rank_k_error_eigh,
    exact_adaptive_distribution,
    exact_lp2_distribution,
    exact_volume_max,
    exact_volume_sampling,
    tv_distance,
    unordered_marginal,
)


def test_lp2_examples():
    assert np.allclose(exact_lp2_distribution(np.ones((4, 2))).probs, 0.25)
    A = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert exact_lp2_distribution(A, p=2).as_dict() == pytest.approx({0: 0.8, 1: 0.2})
    assert exact_lp2_distribution(A, p=1).as_dict() == pytest.approx({0: 2 / 3, 1: 1 / 3})
    with pytest.raises(UndefinedDistribution):
        exact_lp2_distribution(np.zeros((2, 2)))


def test_lp2_with_projector():
    A = np.array([[1.0, 1.0], [0.0, 2.0]])
    P = np.diag([1.0, 0.0])
    assert exact_lp2_distribution(A, P).as_dict() == pytest.approx({0: 1.0, 1: 0.0})


def test_adaptive_three_rows():
    A = np.array([[10.0, 0.0], [10.0, 0.0], [0.0, 1.0]])
    law = exact_adaptive_distribution(A, 2, 2).as_dict()
    assert law[(0, 2)] == pytest.approx(100 / 201)
    assert law[(1, 2)] == pytest.approx(100 / 201)
    assert law[(2, 0)] == pytest.approx(1 / 402)
    assert law[(2, 1)] == pytest.approx(1 / 402)
    assert (0, 1) not in law


def test_adaptive_orthonormal_uniform():
    law = exact_adaptive_distribution(np.eye(4), 2, 2)
    assert len(law.support) == 12
    assert np.allclose(law.probs, 1 / 12)


def test_adaptive_k1_is_lp2(rng):
    A = rng.normal(size=(5, 3))
    for p in (1, 2):
        a = exact_adaptive_distribution(A, 1, p).as_dict()
        b = exact_lp2_distribution(A, p=p).as_dict()
        assert {k[0]: v for k, v in a.items()} == pytest.approx(b)


def test_adaptive_pads_exhausted_paths():
    A = np.array([[1.0, 0.0], [2.0, 0.0]])
    law = exact_adaptive_distribution(A, 2, 2).as_dict()
    assert law == pytest.approx({(0, -1): 0.2, (1, -1): 0.8})


def test_adaptive_size_guard():
    with pytest.raises(SizeGuardError):
        exact_adaptive_distribution(np.eye(11), 2)
    with pytest.raises(SizeGuardError):
        exact_adaptive_distribution(np.eye(4), 4)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32))
def test_adaptive_round_one_marginal(seed):
    A = np.random.default_rng(seed).normal(size=(5, 3))
    law = exact_adaptive_distribution(A, 2, 2)
    assert law.probs.sum() == pytest.approx(1.0, abs=1e-9)
    first = {}
    for key, pr in law.as_dict().items():
        first[key[0]] = first.get(key[0], 0.0) + pr
    assert first == pytest.approx(exact_lp2_distribution(A).as_dict())


def test_volume_sampling_single_independent_subset():
    A = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert exact_volume_sampling(A, 2).as_dict() == {(0, 1): 0.0, (0, 2): 0.0, (1, 2): 1.0}
    B = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    law = exact_volume_sampling(B, 2).as_dict()
    assert law[(0, 2)] == pytest.approx(0.2) and law[(1, 2)] == pytest.approx(0.8)


def test_volume_sampling_orthonormal_uniform():
    law = exact_volume_sampling(np.eye(4), 2)
    assert np.allclose(law.probs, 1 / 6)


def test_volume_sampling_matches_gram(rng):
    A = rng.normal(size=(4, 2))
    law = exact_volume_sampling(A, 2).as_dict()
    w = {T: np.linalg.det(A[list(T)] @ A[list(T)].T) for T in itertools.combinations(range(4), 2)}
    total = sum(w.values())
    assert law == pytest.approx({T: v / total for T, v in w.items()})


def test_volume_max_examples():
    A = np.full((6, 3), 0.1)
    A[[1, 3, 4]] = 5 * np.eye(3)
    assert exact_volume_max(A, 3)[0] == (1, 3, 4)
    B = np.array([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]])
    assert exact_volume_max(B, 1) == ((1,), pytest.approx(3.0))


def test_volume_max_square_vertices():
    sq = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    subset, vol = exact_volume_max(sq, 2)
    assert subset == (0, 1) and vol == pytest.approx(2.0)


def test_volume_max_size_guard():
    with pytest.raises(SizeGuardError):
        exact_volume_max(np.ones((60, 10)), 10)


def test_best_rank_k_examples(rng):
    B = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 4))
    assert best_rank_k_error(B, 2) == pytest.approx(0.0, abs=1e-10)
    assert best_rank_k_error(np.diag([3.0, 2.0, 1.0]), 2) == pytest.approx(1.0)
    A = rng.normal(size=(8, 4))
    for k in range(4):
        assert best_rank_k_error(A, k) == pytest.approx(best_rank_k_error_eigh(A, k), rel=1e-7)
    assert best_rank_k_error(A, 1, p=1) >= 0


def test_tv_examples():
    law = ExactDistribution((0, 1), np.array([0.8, 0.2]))
    assert tv_distance(law, {0: 8, 1: 2}) == pytest.approx(0.0)
    assert tv_distance(law, {0: 70, 1: 30}) == pytest.approx(0.10)
    assert tv_distance(law, {5: 3}) == pytest.approx(1.0)


def test_distribution_validation():
    with pytest.raises(ValueError):
        ExactDistribution((0, 1), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        ExactDistribution((0,), np.array([0.5, 0.5]))


@settings(max_examples=20)
@given(st.integers(0, 2 ** 32))
def test_adaptive_vs_volume_sampling_relation(seed):
    A = np.random.default_rng(seed).normal(size=(5, 3))
    q = unordered_marginal(exact_adaptive_distribution(A, 2, 2))
    p = exact_volume_sampling(A, 2).as_dict()
    for T, qv in q.items():
        assert qv <= math.factorial(2) * p[T] * (1 + 1e-9)
