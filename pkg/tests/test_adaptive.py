import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchstream.acceptance import adaptive_tally
from sketchstream.adaptive import (
    AdaptiveSampler,
    ReplayBanks,
    StreamBanks,
    adaptive_finalize,
    adaptive_runs,
    bank_seeds,
    batch_adaptive_finalize,
    run_schedule,
)
from sketchstream.linalg import OrthoBasis, row_distances
from sketchstream.oracle import exact_adaptive_distribution, tv_distance
from sketchstream.randomness import derive_seed
from sketchstream.samplers import SamplerConfig, multi_sample
from sketchstream.streams import matrix_to_updates

THREE = np.array([[10.0, 0.0], [10.0, 0.0], [0.0, 1.0]])


def test_three_row_joint_law():
    counts, _ = adaptive_tally(THREE, 2, 20_000, 17)
    assert tv_distance(exact_adaptive_distribution(THREE, 2, 2), counts) <= 0.15


def test_orthonormal_rows_uniform_pairs():
    A = np.eye(4)
    counts, _ = adaptive_tally(A, 2, 20_000, 18)
    law = {(i, j): 1 / 12 for i in range(4) for j in range(4) if i != j}
    assert tv_distance(law, counts) <= 0.15


def test_k1_matches_multi_sample(rng):
    A = rng.normal(size=(6, 3))
    cfg = SamplerConfig(eps=0.3)
    for seed in range(5):
        s = AdaptiveSampler(6, 3, 1, config=cfg, seed=seed, ingest="replay")
        s.update_rows(np.arange(6), A)
        sub = adaptive_finalize(s)
        ref = multi_sample(int(derive_seed(seed, 0xBA4C, 0)[0]), A, config=cfg, ingest="replay")
        ours = run_schedule(ReplayBanks(A, cfg, [seed], 1, cfg.reps(6, 0.01)), 3, [1])
        assert sub.indices == [int(i) for i in ours.indices[0] if i >= 0]
        assert ref.ok


def test_stream_and_replay_agree(rng):
    A = rng.integers(-5, 6, size=(7, 3)).astype(float)
    cfg = SamplerConfig(eps=0.3)
    ups = matrix_to_updates(A, seed=4, splits=2)
    for seed in range(4):
        a = AdaptiveSampler(7, 3, 2, config=cfg, seed=seed, ingest="stream")
        b = AdaptiveSampler(7, 3, 2, config=cfg, seed=seed, ingest="replay")
        for i, j, delta in ups:
            a.update(i, j, delta)
            b.update(i, j, delta)
        sa, sb = adaptive_finalize(a), adaptive_finalize(b)
        assert sa.indices == sb.indices
        np.testing.assert_allclose(sa.rows, sb.rows, atol=1e-9)


def test_noisy_rows_mutually_orthogonal(rng):
    A = rng.normal(size=(10, 5))
    out = adaptive_runs(A, 3, derive_seed(3, np.arange(30)), eps=0.2)
    for r in range(30):
        rows = out.subspace(r).rows
        for a in range(len(rows)):
            for b in range(a):
                cos = rows[a] @ rows[b] / (np.linalg.norm(rows[a]) * np.linalg.norm(rows[b]))
                assert abs(cos) <= 1e-8


def test_residual_fidelity(rng):
    A = rng.normal(size=(16, 5))
    out = adaptive_runs(A, 2, derive_seed(5, np.arange(100)), eps=0.1)
    good = 0
    for r in range(100):
        sub = out.subspace(r)
        noisy = np.linalg.norm(row_distances(A, sub.basis))
        true = np.linalg.norm(row_distances(A, OrthoBasis.from_rows(A[sub.indices])))
        good += abs(noisy / true - 1) <= 0.2
    assert good >= 80


def test_zero_matrix_exhausts():
    s = AdaptiveSampler(4, 2, 3, seed=1, ingest="replay")
    sub = batch_adaptive_finalize(s, [1, 1, 1])
    assert sub.size == 0 and sub.rank_exhausted


def test_rank_exhaustion_pads():
    A = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 2.0, 0.0]])
    out = adaptive_runs(A, 3, derive_seed(9, np.arange(50)), eps=0.3)
    done = out.count == 2
    assert done.sum() >= 40
    assert np.all(out.indices[done, 2] == -1) and np.all(out.exhausted[done])


def test_batch_round_rank_tally():
    A = np.eye(6)
    cfg = SamplerConfig(eps=0.3)
    full = 0
    for seed in range(20):
        s = AdaptiveSampler(6, 6, 1, config=cfg, seed=seed, ingest="replay",
                            round_sizes=[6, 6, 6])
        s.update_rows(np.arange(6), A)
        one = s.finalize([6])
        assert one.basis.rank == len(set(one.indices))
        full += s.finalize([6, 6, 6]).basis.rank == 6
    assert full >= 15


def test_ones_schedule_equals_adaptive_finalize(rng):
    A = rng.normal(size=(6, 3))
    s = AdaptiveSampler(6, 3, 2, seed=7, ingest="replay", eps=0.3)
    s.update_rows(np.arange(6), A)
    assert adaptive_finalize(s).indices == batch_adaptive_finalize(s, [1, 1]).indices


def test_schedule_beyond_banks_rejected():
    s = AdaptiveSampler(4, 2, 1, seed=1, ingest="replay")
    with pytest.raises(ValueError):
        s.finalize([1, 1])


def test_stream_banks_memory_guard():
    with pytest.raises(ValueError, match="replay"):
        StreamBanks(100, 10, SamplerConfig(), [0], 10_000, 1000)


def test_bank_seeds_are_distinct():
    s = bank_seeds(np.arange(3, dtype=np.uint64), 2, 0, 5)
    assert s.shape == (3, 5) and len(set(s.ravel().tolist())) == 15
    np.testing.assert_array_equal(bank_seeds([1], 2, 3, 2)[0], s[1, 3:5])


@settings(max_examples=20)
@given(st.integers(0, 2 ** 32))
def test_claimed_rows_nonzero_residual(seed):
    rng = np.random.default_rng(seed)
    A = rng.integers(-3, 4, size=(5, 3)).astype(float)
    out = adaptive_runs(A, 2, derive_seed(seed, np.arange(5)), eps=0.3)
    for r in range(5):
        sub = out.subspace(r)
        basis = OrthoBasis.empty(3)
        for idx, row in zip(sub.indices, sub.rows):
            assert row_distances(A[[idx]], basis)[0] > 0
            basis = OrthoBasis.from_rows(np.vstack([basis.vectors, row]))
