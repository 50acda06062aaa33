"""Compiled per-instance evaluation of sampler stacks from a final matrix.

These kernels recompute, for one instance at a time, exactly the sketch cells
the streaming classes would hold after ingesting ``A`` and then apply the same
finalize rules.  Inputs are ``AP`` stacks (the matrix already multiplied by
each post-processing matrix): since every cell is a signed sum of rows,
``cell @ P`` equals the same signed sum of rows of ``A @ P``.

The hash arithmetic mirrors :mod:`sketchstream.randomness` bit for bit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_G = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TM = np.uint64(0xD6E8FEB86659FD93)
_S27, _S30, _S31 = np.uint64(27), np.uint64(30), np.uint64(31)
_S32, _S34, _S63 = np.uint64(32), np.uint64(34), np.uint64(63)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_LOW32 = np.uint64(0xFFFFFFFF)
_U30 = 2.0 ** -30


@njit(inline="always")
def _fmix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always")
def _derive(seed, label):
    return _fmix(seed ^ _fmix(np.uint64(label) * _TM + _G))


@njit(inline="always")
def _base(seed, tag):
    return _fmix(_fmix(seed + _G) ^ (np.uint64(tag) * _TM))


@njit(inline="always")
def _hk(base, key):
    return _fmix(base ^ _fmix(np.uint64(key) * _M1 + _G))


@njit(inline="always")
def _sign(h):
    return -1.0 if (h >> _S63) == _ONE else 1.0


@njit(inline="always")
def _bucket(h, b):
    return np.int64(((h & _LOW32) * np.uint64(b)) >> _S32)


@njit(inline="always")
def _uniform(h):
    return (np.float64(h >> _S34) + 1.0) * _U30


@njit(inline="always")
def _median_pick(v, r):
    """Lowest index whose value sits at sorted position (r - 1) // 2."""
    pos = (r - 1) // 2
    for k in range(r):
        less = 0
        equal = 0
        for j in range(r):
            if v[j] < v[k]:
                less += 1
            elif v[j] == v[k]:
                equal += 1
        if less <= pos < less + equal:
            return k
    return 0


@njit(cache=True)
def cs_query(X, member, seed, rows, b, tag_sign, tag_bucket, est, norms):
    """Median-by-norm CountSketch estimate of every row of ``X`` (n, d).

    Rows with ``member[i] == False`` are absent from the sketch and their
    reported norm is zero.
    """
    n, d = X.shape
    sg = np.empty((rows, n))
    bk = np.empty((rows, n), dtype=np.int64)
    for k in range(rows):
        bs = _base(seed, tag_sign + np.uint64(k))
        bb = _base(seed, tag_bucket + np.uint64(k))
        for i in range(n):
            sg[k, i] = _sign(_hk(bs, i))
            bk[k, i] = _bucket(_hk(bb, i), b)
    # cells[k, l] holds the bucket sum of the lowest-index member in that bucket
    cells = np.zeros((rows, n, d))
    lead = np.empty((rows, n), dtype=np.int64)
    for k in range(rows):
        for i in range(n):
            lead[k, i] = -1
            if not member[i]:
                continue
            for j in range(i + 1):
                if member[j] and bk[k, j] == bk[k, i]:
                    lead[k, i] = j
                    break
            l = lead[k, i]
            for c in range(d):
                cells[k, l, c] += sg[k, i] * X[i, c]
    cn = np.empty(rows)
    for i in range(n):
        if not member[i]:
            norms[i] = 0.0
            for c in range(d):
                est[i, c] = 0.0
            continue
        for k in range(rows):
            l = lead[k, i]
            acc = 0.0
            for c in range(d):
                acc += cells[k, l, c] * cells[k, l, c]
            cn[k] = np.sqrt(acc)
        pick = _median_pick(cn, rows)
        l = lead[pick, i]
        norms[i] = cn[pick]
        for c in range(d):
            est[i, c] = sg[pick, i] * cells[pick, l, c]


@njit(cache=True)
def ams_estimate(X, seed, tag, groups, per_group):
    """Median-of-means AMS estimate of ||X||_F for one instance."""
    n, d = X.shape
    copies = groups * per_group
    words = (copies + 63) // 64
    acc = np.zeros((d, words * 64))
    sg = np.empty(64)
    for w in range(words):
        base = _base(seed, tag + np.uint64(w))
        lo = w * 64
        for i in range(n):
            h = _hk(base, i)
            for c in range(64):
                sg[c] = 1.0 - 2.0 * np.float64((h >> np.uint64(c)) & _ONE)
            for e in range(d):
                x = X[i, e]
                for c in range(64):
                    acc[e, lo + c] += sg[c] * x
    means = np.empty(groups)
    for g in range(groups):
        s = 0.0
        for e in range(d):
            for c in range(g * per_group, (g + 1) * per_group):
                s += acc[e, c] * acc[e, c]
        means[g] = s / per_group
    return np.sqrt(np.median(means))


@njit(cache=True)
def _level_norms(X, depth, lev, seed, rows, b, tag_sign, tag_bucket, member, est, norms, done):
    if done[lev]:
        return
    done[lev] = True
    for i in range(X.shape[0]):
        member[i] = depth[i] >= lev
    cs_query(X, member, _derive(seed, lev), rows, b, tag_sign, tag_bucket, est, norms[lev])


@njit(cache=True)
def estimator_estimate(X, seed, levels, rows, b, n_bands, tag_level, tag_sign, tag_bucket):
    """Band-counting L_{1,2} estimate of ``X`` for one instance."""
    n, d = X.shape
    depth = np.zeros(n, dtype=np.int64)
    bl = _base(seed, tag_level)
    for i in range(n):
        h = _hk(bl, i)
        for j in range(1, levels):
            if (h >> np.uint64(64 - j)) == _ZERO:
                depth[i] += 1
    norms = np.zeros((levels, n))
    done = np.zeros(levels, dtype=np.bool_)
    est = np.empty((n, d))
    member = np.empty(n, dtype=np.bool_)
    _level_norms(X, depth, 0, seed, rows, b, tag_sign, tag_bucket, member, est, norms, done)
    bound = n * norms[0].max()
    light = b / 8.0
    total = 0.0
    for c in range(n_bands):
        hi = bound / 2.0 ** c
        lo = hi / 2.0
        chosen = levels - 1
        for lev in range(levels):
            _level_norms(X, depth, lev, seed, rows, b, tag_sign, tag_bucket, member, est, norms, done)
            heavy = 0
            for i in range(n):
                if norms[lev, i] > lo:
                    heavy += 1
            if heavy <= light:
                chosen = lev
                break
        count = 0
        for i in range(n):
            v = norms[chosen, i]
            if v > lo and v <= hi:
                count += 1
        total += count * 2.0 ** chosen * 0.75 * hi
    return total


@njit(cache=True)
def sampler_batch(AP, p_of, seeds, p, cs_rows, cs_b, top_count,
                  norm_groups, norm_per, tail_groups, tail_per, row_mult, tail_mult,
                  est_levels, est_rows, est_b, n_bands,
                  tag_scale, tag_ams, tag_sign, tag_bucket, tag_level,
                  out_ok, out_idx, out_noisy, out_t, out_fhat):
    _, n, d = AP.shape
    all_rows = np.ones(n, dtype=np.bool_)
    w = np.empty(n)
    t = np.empty(n)
    BP = np.empty((n, d))
    est = np.empty((n, d))
    norms = np.empty(n)
    diff = np.empty((n, d))
    for q in range(seeds.shape[0]):
        s = seeds[q]
        X = AP[p_of[q]]
        bsc = _base(_derive(s, 4), tag_scale)
        for i in range(n):
            t[i] = _uniform(_hk(bsc, i))
            w[i] = 1.0 / np.sqrt(t[i]) if p == 2 else 1.0 / t[i]
            for c in range(d):
                BP[i, c] = X[i, c] * w[i]
        if p == 2:
            fhat = 1.5 * ams_estimate(X, _derive(s, 2), tag_ams, norm_groups, norm_per)
        else:
            fhat = estimator_estimate(X, _derive(s, 5), est_levels, est_rows, est_b, n_bands,
                                      tag_level, tag_sign, tag_bucket)
        out_fhat[q] = fhat
        cs_query(BP, all_rows, _derive(s, 1), cs_rows, cs_b, tag_sign, tag_bucket, est, norms)
        top = 0
        for i in range(1, n):
            if norms[i] > norms[top]:
                top = i
        best = norms[top]
        ok = best > 0.0 and best >= row_mult * fhat
        if ok:
            order = np.argsort(-norms, kind="mergesort")
            for i in range(n):
                for c in range(d):
                    diff[i, c] = BP[i, c]
            for r in range(min(top_count, n)):
                j = order[r]
                for c in range(d):
                    diff[j, c] -= est[j, c]
            shat = 1.5 * ams_estimate(diff, _derive(s, 3), tag_ams, tail_groups, tail_per)
            ok = shat <= tail_mult * fhat
        out_ok[q] = ok
        if ok:
            out_idx[q] = top
            out_t[q] = t[top]
            root = np.sqrt(t[top]) if p == 2 else t[top]
            for c in range(d):
                out_noisy[q, c] = root * est[top, c]
        else:
            out_idx[q] = -1
            out_t[q] = np.nan
            for c in range(d):
                out_noisy[q, c] = 0.0
