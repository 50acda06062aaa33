import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchstream.sketches import (
    AmsM,
    CountSketchM,
    EstimatorM,
    SketchMismatch,
    from_bytes,
    merge,
    to_bytes,
)
from sketchstream.streams import matrix_to_updates

N, D = 64, 8


def family(seed, n=N, d=D):
    return [AmsM(n, d, 0.5, seed), CountSketchM(n, d, 7, 64, seed), EstimatorM(n, d, seed)]


def feed(sk, updates):
    for i, j, delta in updates:
        sk.update(i, j, delta)


def planted(rng):
    A = rng.normal(size=(N, D))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    A[17] = rng.normal(size=D)
    A[17] *= 100 / np.linalg.norm(A[17])
    return A


@pytest.mark.parametrize("make", [lambda: AmsM(4, 3, 0.5, 1), lambda: CountSketchM(4, 3, 5, 8, 1),
                                  lambda: EstimatorM(4, 3, 1)])
def test_cancelling_updates_give_empty_state(make):
    sk, empty = make(), make()
    sk.update(0, 0, 5.0)
    sk.update(0, 0, -5.0)
    assert np.array_equal(sk.dense(), empty.dense())


def test_update_order_and_negation(rng):
    A = rng.integers(-5, 6, size=(10, 3)).astype(float)
    ups = matrix_to_updates(A, seed=3, splits=3)
    for a, b, c in zip(family(5, 10, 3), family(5, 10, 3), family(5, 10, 3)):
        feed(a, ups)
        feed(b, ups[::-1])
        feed(c, [(i, j, -x) for i, j, x in ups])
        np.testing.assert_allclose(a.dense(), b.dense(), atol=1e-12)
        np.testing.assert_allclose(c.dense(), -a.dense(), atol=1e-12)


@given(st.integers(0, 2 ** 32), st.floats(0, 1))
def test_merge_equals_concatenation(seed, frac):
    rng = np.random.default_rng(seed)
    A = rng.integers(-8, 9, size=(12, 3)).astype(float)
    ups = matrix_to_updates(A, seed=seed, splits=2)
    cut = int(frac * len(ups))
    for whole, left, right in zip(family(seed, 12, 3), family(seed, 12, 3), family(seed, 12, 3)):
        feed(whole, ups)
        feed(left, ups[:cut])
        feed(right, ups[cut:])
        assert np.max(np.abs(merge(left, right).dense() - whole.dense()), initial=0) <= 1e-9


def test_merge_rejects_mismatch():
    with pytest.raises(SketchMismatch):
        merge(AmsM(4, 2, 0.5, 1), AmsM(4, 2, 0.5, 2))
    with pytest.raises(SketchMismatch):
        merge(CountSketchM(4, 2, 5, 8, 1), CountSketchM(4, 2, 5, 16, 1))


def test_update_index_checked():
    with pytest.raises(IndexError):
        AmsM(3, 2, 0.5, 0).update(3, 0, 1.0)
    with pytest.raises(IndexError):
        CountSketchM(3, 2, 5, 8, 0).update(0, 2, 1.0)


@given(st.integers(0, 2 ** 32))
def test_post_processing_commutes(seed):
    rng = np.random.default_rng(seed)
    A = rng.integers(-8, 9, size=(10, 4)).astype(float)
    Q, _ = np.linalg.qr(rng.normal(size=(4, 2)))
    P = np.eye(4) - Q @ Q.T
    for a, b in zip(family(seed, 10, 4), family(seed, 10, 4)):
        a.update_rows(np.arange(10), A)
        b.update_rows(np.arange(10), A @ P)
        assert np.max(np.abs(a.dense() @ P - b.dense())) <= 1e-9


def test_stream_and_block_ingest_agree(rng):
    A = rng.normal(size=(20, 5))
    for a, b in zip(family(8, 20, 5), family(8, 20, 5)):
        feed(a, matrix_to_updates(A))
        b.update_rows(np.arange(20), A)
        np.testing.assert_allclose(a.dense(), b.dense(), atol=1e-12)


def test_ams_zero_and_single_row():
    ams = AmsM(5, 3, 0.2, 4)
    assert ams.estimate()[0] == 0
    for seed in range(20):
        sk = AmsM(5, 3, 0.2, seed)
        sk.update_rows([2], [[3.0, 4.0, 12.0]])
        assert sk.estimate()[0] == pytest.approx(13.0)


def test_ams_concentration(rng):
    A = rng.normal(size=(N, D))
    truth = np.linalg.norm(A)
    sk = AmsM(N, D, 0.2, np.arange(100))
    sk.update_rows(np.arange(N), A)
    assert np.sum(np.abs(sk.estimate() / truth - 1) <= 0.2) >= 90


def test_ams_offset_and_projector(rng):
    A = rng.normal(size=(6, 3))
    P = np.diag([1.0, 0.0, 1.0])
    sk = AmsM(6, 3, 0.2, 3)
    sk.update_rows(np.arange(6), A)
    M = (A @ P)[[1, 4]]
    exact = AmsM(6, 3, 0.2, 3)
    resid = A @ P
    resid[[1, 4]] -= M
    exact.update_rows(np.arange(6), resid)
    got = sk.estimate(P, offset_idx=np.array([[1, 4]]), offset_rows=M[None])
    assert got[0] == pytest.approx(exact.estimate()[0])


def test_countsketch_single_row_exact():
    row = np.array([1.0, -2.0, 0.5])
    for seed in range(20):
        cs = CountSketchM(9, 3, 7, 16, seed)
        cs.update_rows([4], row[None])
        est, norms = cs.query()
        np.testing.assert_allclose(est[0, 4], row)
        assert norms[0, 4] == pytest.approx(np.linalg.norm(row))


def test_countsketch_zero_matrix():
    cs = CountSketchM(5, 2, 7, 16, 0)
    est, norms = cs.query()
    assert not est.any() and not norms.any()
    idx, est, norms = cs.top_rows(None, 3)
    assert idx.shape == (1, 3) and not est.any()


def test_countsketch_planted_recovery(rng):
    A = planted(rng)
    cs = CountSketchM(N, D, 7, 64, np.arange(100))
    cs.update_rows(np.arange(N), A)
    est, norms = cs.query(idx=[17])
    assert np.sum(np.abs(norms[:, 0] / 100 - 1) <= 0.1) >= 95
    idx, _, _ = cs.top_rows(None, 1)
    assert np.sum(idx[:, 0] == 17) >= 95


def test_countsketch_tail_bound(rng):
    good = 0
    for seed in range(100):
        A = np.random.default_rng(seed).normal(size=(N, D))
        cs = CountSketchM(N, D, 7, 64, seed)
        cs.update_rows(np.arange(N), A)
        _, norms = cs.query()
        true = np.linalg.norm(A, axis=1)
        tail = np.sqrt(np.sum(np.sort(true ** 2)[:-8]))
        good += np.max(np.abs(norms[0] - true)) <= tail
    assert good >= 95


def test_top_rows_full_permutation(rng):
    cs = CountSketchM(10, 3, 7, 64, 2)
    cs.update_rows(np.arange(10), rng.normal(size=(10, 3)))
    idx, _, _ = cs.top_rows(None, 10)
    assert sorted(idx[0].tolist()) == list(range(10))
    assert cs.top_rows(None, 50)[0].shape == (1, 10)


def test_query_returns_median_candidate(rng):
    cs = CountSketchM(30, 3, 5, 4, 11)
    cs.update_rows(np.arange(30), rng.normal(size=(30, 3)))
    sg, bk = cs.hashes([7])
    table = cs.dense()[0]
    cands = sg[0, :, 0, None] * table[np.arange(5), bk[0, :, 0]]
    norms = np.linalg.norm(cands, axis=1)
    med = np.sort(norms)[2]
    first = int(np.flatnonzero(norms == med)[0])
    est, _ = cs.query(idx=[7])
    np.testing.assert_array_equal(est[0, 0], cands[first])


def test_estimator_zero_and_single_row():
    assert EstimatorM(8, 2, 0).estimate()[0] == 0
    for seed in range(20):
        est = EstimatorM(8, 2, seed)
        est.update_rows([3], [[6.0, 8.0]])
        assert 5.0 <= est.estimate()[0] <= 20.0


def test_estimator_constant_factor(rng):
    A = rng.normal(size=(N, D))
    truth = np.linalg.norm(A, axis=1).sum()
    est = EstimatorM(N, D, np.arange(100))
    est.update_rows(np.arange(N), A)
    ratio = est.estimate() / truth
    assert np.sum((ratio >= 0.25) & (ratio <= 4)) >= 90


def test_estimator_levels_nested():
    est = EstimatorM(200, 2, np.arange(3))
    depth = est.depth(np.arange(200))
    frac = [(depth >= j).mean() for j in range(est.levels)]
    assert frac[0] == 1.0
    assert all(a >= b for a, b in zip(frac, frac[1:]))


@pytest.mark.parametrize("make", [lambda: AmsM(7, 3, 0.3, [1, 2]),
                                  lambda: CountSketchM(7, 3, 5, 8, [3, 0xFFFFFFFFFFFFFFFF]),
                                  lambda: EstimatorM(7, 3, [9])])
def test_serialization_round_trip(make, rng):
    sk = make()
    sk.update_rows(np.arange(7), rng.normal(size=(7, 3)))
    blob = to_bytes(sk)
    back = from_bytes(blob)
    assert to_bytes(back) == blob
    assert type(back) is type(sk)
    np.testing.assert_array_equal(back.dense(), sk.dense())


def test_from_bytes_rejects_garbage():
    with pytest.raises(ValueError):
        from_bytes(b"not a sketch")
