import itertools
import math

import numpy as np
import pytest

from sketchstream.acceptance import binomial_floor
from sketchstream.apps import (
    Schedule,
    best_flats_in_span,
    projective_cluster_reduce,
    row_subset_select,
    subspace_approx,
    subspace_approx_bicriteria,
    subspace_cost,
    volume_max_turnstile,
)
from sketchstream.linalg import OrthoBasis, parallelepiped_volume, row_distances
from sketchstream.oracle import best_rank_k_error, exact_volume_max
from sketchstream.streams import Stream, matrix_to_updates


def low_rank(rng, n, d, k):
    return rng.normal(size=(n, k)) @ rng.normal(size=(k, d))


def test_rss_rank_k_cost_zero(rng):
    A = low_rank(rng, 20, 5, 2)
    res = row_subset_select(A, 2, seed=1, ingest="replay")
    assert res.cost <= 1e-8 * np.sum(A * A)


def test_rss_k0_cost_is_frobenius(rng):
    A = rng.normal(size=(10, 4))
    assert row_subset_select(A, 0, ingest="replay").cost == pytest.approx(np.sum(A * A))


def test_rss_bound_success_rate():
    A = np.random.default_rng(321).normal(size=(32, 6))
    bound = 16 * math.factorial(3) * best_rank_k_error(A, 2) ** 2
    wins = sum(row_subset_select(A, 2, seed=s, ingest="replay").cost <= bound for s in range(100))
    assert wins >= binomial_floor(100, 2 / 3)


def test_rss_stream_matches_replay(rng):
    A = rng.integers(-5, 6, size=(8, 3)).astype(float)
    stream = Stream("turnstile", 8, 3, updates=matrix_to_updates(A, seed=1, splits=2))
    for seed in range(3):
        a = row_subset_select(stream, 2, eps=0.3, seed=seed, ingest="stream")
        b = row_subset_select(A, 2, eps=0.3, seed=seed, ingest="replay")
        assert a.indices == b.indices
        assert a.cost == pytest.approx(b.cost, rel=1e-9, abs=1e-12)


def test_cost_recomputable(rng):
    A = rng.normal(size=(12, 4))
    res = subspace_approx(A, 2, p=1, seed=3, ingest="replay")
    basis = OrthoBasis.from_rows(res.rows.rows, 4)
    assert res.cost == pytest.approx(np.sum(row_distances(A, basis)), rel=1e-8)
    assert res.extra["cost_root"] == pytest.approx(res.cost)


def test_subspace_p2_matches_rss(rng):
    A = rng.normal(size=(12, 4))
    for seed in range(3):
        a = subspace_approx(A, 2, p=2, seed=seed, ingest="replay")
        b = row_subset_select(A, 2, seed=seed, ingest="replay")
        assert a.indices == b.indices and a.cost == b.cost


def test_subspace_rank_k_zero(rng):
    A = low_rank(rng, 15, 4, 1)
    for p in (1, 2):
        assert subspace_approx(A, 1, p=p, ingest="replay").cost <= 1e-8 * np.sum(np.abs(A))


def test_subspace_p1_bound_success_rate():
    A = np.random.default_rng(322).normal(size=(32, 6))
    ref = best_rank_k_error(A, 2, p=1)
    wins = sum(subspace_approx(A, 2, p=1, seed=s, ingest="replay").cost <= 24 * ref
               for s in range(100))
    assert wins >= binomial_floor(100, 2 / 3)


def test_schedule_defaults():
    s = Schedule.default(2, 2, 0.5)
    assert s.outer == math.ceil(2 * math.log(3)) and s.inner == 2 and s.repeats == 2
    assert s.batch >= 1


def test_bicriteria_without_outer_rounds_is_k_dimensional(rng):
    A = rng.normal(size=(16, 5))
    res = subspace_approx_bicriteria(A, 2, schedule=Schedule(0, 2, 1, 1), seed=4,
                                     ingest="replay")
    assert res.extra["dimension"] <= 2
    assert res.cost >= best_rank_k_error(A, 2) ** 2 - 1e-9


def test_bicriteria_one_round_not_worse_than_seed_rows(rng):
    A = rng.normal(size=(16, 5))
    base = subspace_approx_bicriteria(A, 2, schedule=Schedule(0, 2, 1, 1), seed=4,
                                      ingest="replay")
    more = subspace_approx_bicriteria(A, 2, schedule=Schedule(1, 2, 1, 1), seed=4,
                                      ingest="replay")
    assert more.cost <= base.cost + 1e-12
    assert more.extra["dimension"] <= 4


def test_bicriteria_rank_k_zero(rng):
    A = low_rank(rng, 20, 6, 2)
    res = subspace_approx_bicriteria(A, 2, seed=1, ingest="replay")
    assert res.cost <= 1e-8 * np.sum(A * A)


def test_bicriteria_success_rate():
    A = np.random.default_rng(323).normal(size=(32, 6))
    opt = best_rank_k_error(A, 2) ** 2
    wins = sum(subspace_approx_bicriteria(A, 2, p=2, shrink=1 / 8, seed=s,
                                          ingest="replay").cost <= 1.5 * opt
               for s in range(50))
    assert wins >= binomial_floor(50, 2 / 3)


def test_cluster_single_flat_is_a_k_flat(rng):
    A = rng.normal(size=(16, 5))
    pc = projective_cluster_reduce(A, 2, 1, seed=2, ingest="replay")
    assert pc.cost >= best_rank_k_error(A, 2) ** 2 - 1e-9
    assert pc.cost <= np.sum(A * A)


def test_cluster_exact_cover(rng):
    base = np.eye(4)[:2] * [[3.0], [5.0]]
    A = np.repeat(base, 10, axis=0) * rng.uniform(0.5, 2.0, size=(20, 1))
    res = projective_cluster_reduce(A, 1, 2, seed=5, ingest="replay")
    assert res.cost <= 1e-6 * np.linalg.norm(A)


def test_cluster_against_candidate_line_pairs():
    A = np.random.default_rng(324).normal(size=(24, 6))
    res = projective_cluster_reduce(A, 1, 2, seed=6, ingest="replay")
    cand = res.rows
    lines = [OrthoBasis.from_rows(r[None], 6) for r in cand if np.linalg.norm(r) > 0]
    best = min(np.sum(np.minimum(row_distances(A, a), row_distances(A, b)) ** 2)
               for a, b in itertools.combinations(lines, 2))
    assert res.extra["extracted"]
    assert res.cost <= 1.5 * best


def test_best_flats_in_span_finds_planted_lines():
    A = np.array([[1.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0], [0, 3.0, 0]])
    span = OrthoBasis.from_rows(np.eye(3)[:2])
    cost, flats = best_flats_in_span(A, A, span, 1, 2, 2)
    assert cost == pytest.approx(0.0, abs=1e-20)
    assert len(flats) == 2


def test_volmax_orthogonal_rows():
    A = np.zeros((12, 5))
    A[[2, 5, 9], :3] = np.diag([4.0, 2.0, 7.0])
    res = volume_max_turnstile(A, 3, seed=1, ingest="replay")
    assert sorted(res.indices) == [2, 5, 9]
    assert res.cost == pytest.approx(56.0)
    assert abs(res.extra["noisy_volume"] / 56.0 - 1) <= (1 + 2 * 0.25) ** 3 - 1


def test_volmax_k1_ratio():
    A = np.random.default_rng(5).normal(size=(16, 4))
    top = np.linalg.norm(A, axis=1).max()
    ratios = [top / volume_max_turnstile(A, 1, seed=s, ingest="replay").cost for s in range(50)]
    assert sum(r <= 4.0 for r in ratios) >= binomial_floor(50, 2 / 3)


def test_volmax_success_rate():
    A = np.random.default_rng(325).normal(size=(16, 5))
    _, opt = exact_volume_max(A, 3)
    wins = sum(opt / volume_max_turnstile(A, 3, 2.0, seed=s, ingest="replay").cost <= 48
               for s in range(100))
    assert wins >= binomial_floor(100, 2 / 3)


def test_volmax_round_fallback_inequality():
    rounds = []
    for s in range(40):
        A = np.random.default_rng(400 + s).normal(size=(16, 5))
        rounds += volume_max_turnstile(A, 3, 2.0, seed=s, ingest="replay").extra["rounds"]
    ok = [r.noisy_norm >= r.max_true_norm / 4.0 for r in rounds if r.source != "fail"]
    assert np.mean(ok) >= 0.95


def test_volmax_stream_matches_replay(rng):
    A = rng.integers(-5, 6, size=(8, 4)).astype(float)
    stream = Stream("turnstile", 8, 4, updates=matrix_to_updates(A, seed=2, splits=2))
    for seed in range(3):
        a = volume_max_turnstile(stream, 2, seed=seed, ingest="stream")
        b = volume_max_turnstile(A, 2, seed=seed, ingest="replay")
        assert a.indices == b.indices


def test_volmax_rejects_alpha():
    with pytest.raises(ValueError):
        volume_max_turnstile(np.eye(3), 1, alpha=1.0)


def test_subspace_cost_helper(rng):
    A = rng.normal(size=(5, 3))
    b = OrthoBasis.from_rows(np.eye(3)[:1])
    assert subspace_cost(A, b, 2) == pytest.approx(np.sum(A[:, 1:] ** 2))
    assert parallelepiped_volume(A[:0]) == 1.0
