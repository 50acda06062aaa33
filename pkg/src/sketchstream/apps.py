"""Turnstile applications of noisy adaptive sampling.

Every entry point takes the stream either as a final dense matrix or as a
:class:`~sketchstream.streams.Stream`, plus a seed.  Costs are always
evaluated against the dense matrix so they are independent of the sketches.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .adaptive import (
    FLOOR_ABS,
    FLOOR_REL,
    ReplayBanks,
    SampledSubspace,
    StreamBanks,
    run_schedule,
)
from .linalg import OrthoBasis, orthonormal_extend, parallelepiped_volume, row_distances
from .randomness import derive_seed
from .samplers import SamplerConfig
from .sketches import AmsM, CountSketchM
from .streams import Stream

TAG_REPEAT = 0x5EED
TAG_OUTER = 0x0DE7
TAG_EXTRA = 0xE8A
TAG_VOLMAX = 0x7011


@dataclass
class SummaryResult:
    objective: str  # rss | subspace_p | pc_cost | volume
    cost: float
    rows: SampledSubspace | np.ndarray
    indices: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _matrix(source) -> np.ndarray:
    if isinstance(source, Stream):
        return source.matrix()
    return np.asarray(source, dtype=np.float64)


def _provider(source, config: SamplerConfig, run_seeds, banks: int, reps: int, ingest: str):
    A = _matrix(source)
    if ingest == "replay":
        return ReplayBanks(A, config, run_seeds, banks, reps)
    if ingest != "stream":
        raise ValueError(f"unknown ingest mode {ingest!r}")
    n, d = A.shape
    prov = StreamBanks(n, d, config, run_seeds, banks, reps)
    if isinstance(source, Stream) and source.kind == "turnstile":
        for i, j, delta in source.updates:
            prov.update(i, j, delta)
    else:
        prov.update_rows(np.arange(n), A)
    return prov


def subspace_cost(A, basis: OrthoBasis, p: int) -> float:
    """sum_i d(A_i, span)^p."""
    return float(np.sum(row_distances(A, basis) ** p))


def _adaptive(source, k: int, p: int, eps: float, seed: int, delta: float,
              config: SamplerConfig | None, ingest: str) -> SampledSubspace:
    A = _matrix(source)
    config = config or SamplerConfig(p=p, eps=eps)
    reps = config.reps(A.shape[0], delta)
    prov = _provider(source, config, [seed], k, reps, ingest)
    return run_schedule(prov, A.shape[1], [1] * k).subspace(0)


def row_subset_select(source, k: int, eps: float = 0.1, seed: int = 0, delta: float = 0.01,
                      config: SamplerConfig | None = None, ingest: str = "stream") -> SummaryResult:
    """k adaptively sampled noisy rows; cost ||A - A R^+ R||_F^2."""
    A = _matrix(source)
    sub = _adaptive(source, k, 2, eps, seed, delta, config, ingest)
    return SummaryResult("rss", subspace_cost(A, sub.basis, 2), sub, list(sub.indices))


def subspace_approx(source, k: int, p: int = 2, eps: float = 0.1, seed: int = 0,
                    delta: float = 0.01, config: SamplerConfig | None = None,
                    ingest: str = "stream") -> SummaryResult:
    """k adaptive rows under the p-th power of distances; cost sum_i d(A_i, R)^p."""
    A = _matrix(source)
    sub = _adaptive(source, k, p, eps, seed, delta, config, ingest)
    res = SummaryResult("subspace_p", subspace_cost(A, sub.basis, p), sub, list(sub.indices))
    res.extra["cost_root"] = res.cost ** (1.0 / p)
    return res


@dataclass(frozen=True)
class Schedule:
    """Repeated oversampling: ``outer`` iterations of ``inner`` batches of ``batch`` rows."""

    outer: int
    inner: int
    batch: int
    repeats: int

    @classmethod
    def default(cls, k: int, p: int, eps: float, shrink: float = 1 / 8,
                repeats: int | None = None) -> "Schedule":
        delta = eps / max(math.log(k), 1.0)
        kd = k / delta
        size = (2 * k / delta) ** p * kd * max(math.log(kd), 1.0)
        return cls(max(1, math.ceil(k * math.log(k + 1))), k,
                   max(1, math.ceil(shrink * size)), repeats or k)


def _bicriteria_basis(source, k: int, p: int, eps: float, seed: int, schedule: Schedule,
                      delta: float, config: SamplerConfig | None, ingest: str):
    A = _matrix(source)
    n, d = A.shape
    config = config or SamplerConfig(p=p, eps=eps)
    reps = config.reps(n, delta)
    union = OrthoBasis.empty(d)
    rows, indices = [], []
    exhausted = failed = False
    for rep in range(schedule.repeats):
        rep_seed = int(derive_seed(seed, TAG_REPEAT, rep)[0])
        prov = _provider(source, config, [rep_seed], k, reps, ingest)
        first = run_schedule(prov, d, [1] * k)
        s0 = first.subspace(0)
        rows.extend(s0.rows)
        indices.extend(s0.indices)
        for row in s0.rows:
            union = orthonormal_extend(union, row)
        exhausted |= s0.rank_exhausted
        failed |= s0.failed
        if s0.rank_exhausted or s0.failed:
            continue
        for it in range(schedule.outer):
            it_seed = int(derive_seed(seed, TAG_OUTER, rep, it)[0])
            prov = _provider(source, config, [it_seed], schedule.inner * schedule.batch,
                             reps, ingest)
            runs = run_schedule(prov, d, [schedule.batch] * schedule.inner, bases=[s0.basis])
            got = runs.subspace(0)
            new = got.rows
            rows.extend(new)
            indices.extend(got.indices)
            for row in new:
                union = orthonormal_extend(union, row)
            if got.rank_exhausted:
                exhausted = True
                break
            failed |= got.failed
    return union, np.array(rows).reshape(-1, d), indices, exhausted, failed


def subspace_approx_bicriteria(source, k: int, p: int = 2, eps: float = 0.5, seed: int = 0,
                               schedule: Schedule | None = None, shrink: float = 1 / 8,
                               delta: float = 0.01, config: SamplerConfig | None = None,
                               ingest: str = "stream") -> SummaryResult:
    """Union of repeated adaptive oversampling rounds; cost of the whole span.

    Within an outer iteration, batch ``i`` samples against the span of the
    seed rows plus the batches already drawn in that iteration.
    """
    A = _matrix(source)
    schedule = schedule or Schedule.default(k, p, eps, shrink)
    basis, rows, idx, exhausted, failed = _bicriteria_basis(
        source, k, p, eps, seed, schedule, delta, config, ingest)
    sub = SampledSubspace(rows, idx, basis, exhausted, failed)
    res = SummaryResult("subspace_p", subspace_cost(A, basis, p), sub, idx)
    res.extra.update(schedule=schedule, dimension=basis.rank)
    return res


def _union_cost(A, flats, p: int) -> tuple[float, np.ndarray]:
    dist = np.stack([row_distances(A, f) for f in flats])
    best = dist.min(axis=0)
    return float(np.sum(best ** p)), dist.argmin(axis=0)


def _refine(A, span: OrthoBasis, flats, k: int, p: int, rounds: int = 20):
    """Alternate nearest-flat assignment and best k-flat (inside ``span``) per cluster."""
    cost, assign = _union_cost(A, flats, p)
    Q = span.vectors
    for _ in range(rounds):
        new = []
        for c in range(len(flats)):
            pts = A[assign == c] @ Q.T @ Q
            if pts.shape[0] == 0 or not np.any(pts):
                new.append(flats[c])
                continue
            _, _, vt = np.linalg.svd(pts, full_matrices=False)
            new.append(OrthoBasis(A.shape[1], vt[:k]))
        new_cost, new_assign = _union_cost(A, new, p)
        if new_cost >= cost - 1e-12 * max(cost, 1.0):
            break
        flats, cost, assign = new, new_cost, new_assign
    return cost, flats


def best_flats_in_span(A, candidates, span: OrthoBasis, k: int, s: int, p: int):
    """Best union of ``s`` k-flats found by seeding with candidate k-subsets, then refining."""
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[1]
    seeds = []
    for T in itertools.combinations(range(len(candidates)), k):
        b = OrthoBasis.from_rows(candidates[list(T)], d)
        if b.rank == k:
            seeds.append(b)
    # de-duplicate identical flats before forming s-tuples
    uniq, keys = [], set()
    for b in seeds:
        key = tuple(np.round(b.projector(), 9).ravel())
        if key not in keys:
            keys.add(key)
            uniq.append(b)
    best_cost, best = math.inf, None
    for combo in itertools.combinations(range(len(uniq)), min(s, len(uniq))):
        cost, flats = _refine(A, span, [uniq[c] for c in combo], k, p)
        if cost < best_cost:
            best_cost, best = cost, flats
    return best_cost, best


def projective_cluster_reduce(source, k: int, s: int, p: int = 2, eps: float = 0.5,
                              seed: int = 0, shrink: float = 1 / 8, extra: int | None = None,
                              delta: float = 0.01, config: SamplerConfig | None = None,
                              ingest: str = "stream", max_extract: int = 4) -> SummaryResult:
    """Candidate rows V u S containing a good union of ``s`` k-dimensional flats.

    V is a bicriteria subspace for dimension ``k * s``; S adds ``extra``
    adaptive samples away from V.  When ``k * s <= max_extract`` the best union
    of flats inside the candidate span is searched for; otherwise the reported
    cost is the best ``k * s``-dimensional subspace inside the span, a lower
    bound for any union of s k-flats there.
    """
    A = _matrix(source)
    n, d = A.shape
    ks = k * s
    sched = Schedule.default(ks, p, eps, shrink)
    V, rows, idx, exhausted, failed = _bicriteria_basis(
        source, ks, p, eps, seed, sched, delta, config, ingest)
    if extra is None:
        extra = max(1, math.ceil(shrink * (k * k / eps) ** p * k ** 4 * s / eps ** 2))
    span = V
    all_rows, all_idx = list(rows), list(idx)
    if not exhausted and span.rank < d:
        config_ = config or SamplerConfig(p=p, eps=eps)
        prov = _provider(source, config_, [int(derive_seed(seed, TAG_EXTRA)[0])], extra,
                         config_.reps(n, delta), ingest)
        more = run_schedule(prov, d, [1] * extra, bases=[V]).subspace(0)
        all_rows.extend(more.rows)
        all_idx.extend(more.indices)
        span = more.basis
    cand = np.array(all_rows).reshape(-1, d)
    span_cost = subspace_cost(A, span, p)
    res = SummaryResult("pc_cost", 0.0, cand, all_idx,
                        {"span_dim": span.rank, "span_cost": span_cost, "extra": extra})
    if ks <= max_extract and cand.shape[0] >= k:
        cost, flats = best_flats_in_span(A, cand, span, k, s, p)
        res.cost = cost
        res.extra.update(flats=flats, extracted=True)
    else:
        Q = span.vectors
        W = OrthoBasis(d, _top_dirs(A @ Q.T, ks) @ Q) if ks < span.rank else span
        res.cost = subspace_cost(A, W, p)
        res.extra.update(extracted=False, lower_bound=True)
    return res


def _top_dirs(M, k: int) -> np.ndarray:
    _, _, vt = np.linalg.svd(M, full_matrices=False)
    return vt[:k]


@dataclass
class VolumeRound:
    source: str  # "heavy" or "sample" or "fail"
    index: int
    noisy_norm: float
    max_true_norm: float


def volume_max_turnstile(source, k: int, alpha: float = 2.0, seed: int = 0,
                         c_rep: float = 4.0, buckets: int | None = None,
                         ingest: str = "stream", sampler_eps: float = 0.25,
                         reps: int | None = None) -> SummaryResult:
    """Greedy-style volume maximization from one pass.

    Each round projects away the rows picked so far; if the heavy-row sketch
    certifies a row with ``||r||^2 >= alpha^2 / (4 n k) * F_hat^2`` the largest
    one is taken, otherwise the round's sampler bank supplies the row.  The
    reported cost is the volume of the original rows at the chosen indices.
    """
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    A = _matrix(source)
    n, d = A.shape
    if buckets is None:
        buckets = min(math.ceil(4 * n * k / alpha ** 2), 4096)
    config = SamplerConfig(p=2, eps=sampler_eps, c_rep=c_rep, fixed_reps=reps)
    reps = config.reps(n, 1.0 / (3 * max(k, 1)))
    base = derive_seed(seed, TAG_VOLMAX)
    ams = AmsM(n, d, 1.0 / 3.0, derive_seed(base, 1, np.arange(k)))
    cs = CountSketchM(n, d, 7, buckets, derive_seed(base, 2, np.arange(k)))
    bank_seed = int(derive_seed(base, 3)[0])
    prov = _provider(source, config, [bank_seed], k, reps, ingest)
    if isinstance(source, Stream) and source.kind == "turnstile":
        for i, j, delta in source.updates:
            ams.update(i, j, delta)
            cs.update(i, j, delta)
    else:
        ams.update_rows(np.arange(n), A)
        cs.update_rows(np.arange(n), A)
    basis = OrthoBasis.empty(d)
    rows, idx, diag = [], [], []
    thresh = alpha ** 2 / (4 * n * max(k, 1))
    for j in range(k):
        P = basis.projector()
        fhat = 1.5 * ams.subset([j]).estimate(P)[0]
        if j == 0:
            floor = max(FLOOR_ABS, FLOOR_REL * fhat)
        if fhat < floor:
            break
        top, est, norms = cs.subset([j]).top_rows(P, 1)
        max_true = float(np.max(np.linalg.norm(A @ P, axis=1)))
        if norms[0, 0] ** 2 >= thresh * fhat ** 2 and norms[0, 0] > 0:
            r, i, kind = est[0, 0], int(top[0, 0]), "heavy"
        else:
            draw = prov.draw(j, np.array([0]), P[None])
            if not draw.ok[0]:
                diag.append(VolumeRound("fail", -1, 0.0, max_true))
                break
            r, i, kind = draw.noisy[0], int(draw.index[0]), "sample"
        diag.append(VolumeRound(kind, i, float(np.linalg.norm(r)), max_true))
        rows.append(r)
        idx.append(i)
        basis = orthonormal_extend(basis, r)
    true_rows = A[idx] if idx else np.zeros((0, d))
    vol = parallelepiped_volume(true_rows) if len(idx) <= d else 0.0
    sub = SampledSubspace(np.array(rows).reshape(-1, d), idx, basis, len(idx) < k)
    return SummaryResult("volume", vol, sub, idx,
                         {"noisy_volume": parallelepiped_volume(sub.rows) if rows else 1.0,
                          "rounds": diag, "buckets": buckets})
