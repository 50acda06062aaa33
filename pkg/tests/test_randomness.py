import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchstream.randomness import (
    UNIFORM_FLOOR,
    HashFamily,
    derive_seed,
    hash64,
    parse_seed,
    sign_block,
)

KEYS = np.arange(100_000)


def test_sign_is_deterministic():
    h = HashFamily(0xABCDEF, "sign")
    assert h.sign(0) == h.sign(0)
    assert h.sign(0) in (-1, 1)


def test_sign_mean_is_balanced():
    mean = HashFamily(7, "sign").sign(KEYS).mean()
    assert -0.02 <= mean <= 0.02


def test_distinct_seeds_disagree():
    a = HashFamily(1, "sign").sign(np.arange(10_000))
    b = HashFamily(2, "sign").sign(np.arange(10_000))
    assert np.mean(a != b) >= 0.40


def test_single_bucket_is_zero():
    assert np.all(HashFamily(3, "bucket", buckets=1).bucket(np.arange(1000)) == 0)


def test_bucket_loads_within_three_sigma():
    b = 16
    loads = np.bincount(HashFamily(11, "bucket", buckets=b).bucket(KEYS), minlength=b)
    mean = KEYS.size / b
    sigma = np.sqrt(KEYS.size * (1 / b) * (1 - 1 / b))
    assert np.all(np.abs(loads - mean) <= 3 * sigma)


def test_bucket_range_and_determinism():
    h = HashFamily(5, "bucket", buckets=13)
    out = h.bucket(KEYS[:5000])
    assert out.min() >= 0 and out.max() < 13
    assert np.array_equal(out, h.bucket(KEYS[:5000]))


def test_uniform_scale_range_and_mean():
    u = HashFamily(9, "uniform").uniform_scale(KEYS)
    assert np.all(u > 0) and np.all(u <= 1)
    assert np.all(u >= UNIFORM_FLOOR)
    assert 0.49 <= u.mean() <= 0.51
    assert HashFamily(9, "uniform").uniform_scale(17) == u[17]


def test_uniform_is_thirty_bit_fixed_point():
    u = HashFamily(4, "uniform").uniform_scale(np.arange(1000))
    scaled = u * 2 ** 30
    assert np.array_equal(scaled, np.round(scaled))


@pytest.mark.parametrize("kind,method", [("sign", "bucket"), ("bucket", "uniform_scale"),
                                         ("uniform", "sign")])
def test_wrong_kind_raises(kind, method):
    h = HashFamily(0, kind, buckets=4)
    with pytest.raises(TypeError):
        getattr(h, method)(1)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        HashFamily(0, "gauss")


def test_parse_seed_accepts_hex_and_decimal():
    assert parse_seed("255") == 255
    assert parse_seed("0xff") == 255
    assert parse_seed("0xFFFFFFFFFFFFFFFF") == 2 ** 64 - 1
    with pytest.raises(ValueError):
        parse_seed(str(2 ** 64))


def test_derive_seed_broadcasts():
    grid = derive_seed(np.array([1, 2, 3], dtype=np.uint64)[:, None], np.arange(4))
    assert grid.shape == (3, 4)
    assert len(set(grid.ravel().tolist())) == 12
    assert grid[1, 2] == derive_seed(2, 2)[0]


def test_sign_block_matches_word_layout():
    blk = sign_block(99, 1 << 20, np.arange(10), 130)
    assert blk.shape == (10, 130)
    word = hash64(99, (1 << 20) + 2, np.arange(10))
    bit1 = ((word >> np.uint64(1)) & np.uint64(1)).astype(np.float64)
    assert np.array_equal(blk[:, 129], 1 - 2 * bit1)


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 2 ** 62))
def test_hash_determinism(seed, key):
    assert hash64(seed, 3, key)[0] == hash64(seed, 3, key)[0]
