"""One-pass L_{p,2} row samplers (p in {1, 2}) with post-processing matrices.

Each instance rescales row ``i`` by ``t_i ** (-1/p)`` with a seeded uniform
``t_i`` and keeps three linear sketches of the stream:

* a CountSketchM over the scaled rows ``B`` that recovers the heaviest rows,
* a norm sketch over ``A`` giving ``F_hat`` (AmsM for p=2, EstimatorM for p=1),
* an AmsM over ``B`` used for the tail estimate once the heavy rows are removed.

At finalize time the instance either reports the row whose scaled norm clears
a threshold, or FAIL.

Instances come in stacks.  A stack is either fed the stream directly
("stream" ingest) or evaluated from the final matrix ("replay" ingest).  By
linearity both give the same sketch state, so replay is only a way to skip
building sketches that are never queried.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .randomness import derive_seed, hash64, uniform_from_hash
from . import _kernels
from .sketches import TAG_AMS, TAG_CS_BUCKET, TAG_CS_SIGN, TAG_LEVEL, AmsM, CountSketchM, EstimatorM

TAG_SCALE = 5 << 40

SUB_CS, SUB_NORM, SUB_TAIL, SUB_SCALE, SUB_EST = 1, 2, 3, 4, 5  # fixed in the kernels too

FAIL = "FAIL"
SAMPLE = "SAMPLE"


@dataclass(frozen=True)
class SamplerConfig:
    p: int = 2
    eps: float = 0.1
    c_K: float = 1.0
    c_tail: float = 1.0
    c_rep: float = 4.0
    cs_rows: int = 7
    buckets: int | None = None
    norm_eps: float = 1.0 / 3.0
    tail_eps: float = 1.0 / 3.0
    est_rows: int = 5
    est_buckets: int = 64
    fixed_reps: int | None = None  # overrides the computed repetition count

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        for name in ("c_K", "c_tail", "c_rep", "cs_rows", "norm_eps", "tail_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.buckets is not None and self.buckets < 1:
            raise ValueError("buckets must be positive")
        if self.fixed_reps is not None and self.fixed_reps < 1:
            raise ValueError("fixed_reps must be positive")

    def with_(self, **kw) -> "SamplerConfig":
        return replace(self, **kw)

    def cs_buckets(self, n: int) -> int:
        if self.buckets is not None:
            return int(self.buckets)
        if self.p == 2:
            return max(256, math.ceil(32 / self.eps ** 2))
        return max(256, math.ceil(32 * math.log(max(n, 2)) ** 2 / self.eps ** 2))

    def top_count(self) -> int:
        return math.ceil(2 / self.eps ** 2)

    def K(self, n: int) -> float:
        ln = math.log(max(n, 2))
        return self.c_K * ln / (self.eps if self.p == 2 else self.eps ** 2)

    def thresholds(self, n: int) -> tuple[float, float]:
        """Multipliers of F_hat for the (row, tail) tests."""
        ln = math.log(max(n, 2))
        if self.p == 2:
            return math.sqrt(self.c_K * ln / self.eps), math.sqrt(self.c_tail * ln / self.eps)
        return self.c_K * ln / self.eps ** 2, self.c_tail * ln / self.eps

    def reps(self, n: int, delta: float) -> int:
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.fixed_reps is not None:
            return int(self.fixed_reps)
        return max(1, math.ceil(self.c_rep * self.K(n) * math.log(1 / delta)))


@dataclass(frozen=True)
class SampleOutcome:
    status: str
    index: int = -1
    noisy_row: np.ndarray | None = None
    scale: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status == SAMPLE


@dataclass
class SampleBatch:
    """Vectorized outcomes of a stack of instances."""

    ok: np.ndarray  # (m,) bool
    index: np.ndarray  # (m,) int, -1 on FAIL
    noisy: np.ndarray  # (m, d)
    scale: np.ndarray  # (m,)
    fhat: np.ndarray  # (m,)

    def __len__(self) -> int:
        return self.ok.shape[0]

    def outcome(self, q: int) -> SampleOutcome:
        if not self.ok[q]:
            return SampleOutcome(FAIL)
        return SampleOutcome(SAMPLE, int(self.index[q]), self.noisy[q].copy(), float(self.scale[q]))

    def first_success(self) -> int | None:
        hits = np.flatnonzero(self.ok)
        return int(hits[0]) if hits.size else None

    @staticmethod
    def concat(parts) -> "SampleBatch":
        return SampleBatch(*(np.concatenate([getattr(b, f) for b in parts])
                             for f in ("ok", "index", "noisy", "scale", "fhat")))


def _select_p(P, sel):
    if P is None:
        return None
    P = np.asarray(P, dtype=np.float64)
    return P if P.ndim == 2 else P[sel]


class LpSamplerStack:
    """``m`` independent sampler instances fed the same stream."""

    def __init__(self, n: int, d: int, config: SamplerConfig, seeds):
        self.n, self.d, self.config = int(n), int(d), config
        self.seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64)).ravel()
        self.cs = CountSketchM(n, d, config.cs_rows, config.cs_buckets(n),
                               derive_seed(self.seeds, SUB_CS))
        if config.p == 2:
            self.norm = AmsM(n, d, config.norm_eps, derive_seed(self.seeds, SUB_NORM))
        else:
            self.norm = EstimatorM(n, d, derive_seed(self.seeds, SUB_EST),
                                   config.est_rows, config.est_buckets)
        self.tail = AmsM(n, d, config.tail_eps, derive_seed(self.seeds, SUB_TAIL))

    @property
    def m(self) -> int:
        return self.seeds.shape[0]

    def scales(self, idx) -> np.ndarray:
        """t_i for every instance and key: shape (m, q)."""
        keys = np.asarray(idx, dtype=np.int64)
        return uniform_from_hash(hash64(derive_seed(self.seeds, SUB_SCALE)[:, None],
                                        TAG_SCALE, keys))

    def _inv_root(self, t: np.ndarray) -> np.ndarray:
        return 1.0 / np.sqrt(t) if self.config.p == 2 else 1.0 / t

    def update(self, i: int, j: int, delta: float) -> None:
        w = self._inv_root(self.scales([i])[:, 0])
        self.cs.update(i, j, delta * w)
        self.norm.update(i, j, delta)
        self.tail.update(i, j, delta * w)

    def update_rows(self, idx, rows) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        rows = np.asarray(rows, dtype=np.float64)
        scaled = rows[None] * self._inv_root(self.scales(idx))[..., None]
        self.cs.update_rows(idx, scaled)
        self.norm.update_rows(idx, rows)
        self.tail.update_rows(idx, scaled)

    def norm_estimate(self, P=None) -> np.ndarray:
        est = self.norm.estimate(P)
        return 1.5 * est if self.config.p == 2 else est

    def finalize(self, P=None) -> SampleBatch:
        c = self.config
        row_mult, tail_mult = c.thresholds(self.n)
        fhat = self.norm_estimate(P)
        idx, est, norms = self.cs.top_rows(P, c.top_count())
        top = norms[:, 0]
        ok = (top > 0) & (top >= row_mult * fhat)
        cand = np.flatnonzero(ok)
        if cand.size:
            shat = 1.5 * self.tail.subset(cand).estimate(
                _select_p(P, cand), offset_idx=idx[cand], offset_rows=est[cand])
            ok[cand] = shat <= tail_mult * fhat[cand]
        m = self.m
        index = np.where(ok, idx[:, 0], -1)
        t = np.full(m, np.nan)
        noisy = np.zeros((m, self.d))
        hit = np.flatnonzero(ok)
        if hit.size:
            th = np.take_along_axis(self.scales(np.arange(self.n))[hit], idx[hit, :1], axis=1)[:, 0]
            t[hit] = th
            root = np.sqrt(th) if c.p == 2 else th
            noisy[hit] = root[:, None] * est[hit, 0]
        return SampleBatch(ok, index, noisy, t, fhat)


def replay_finalize(A, config: SamplerConfig, seeds, P=None, p_index=None) -> SampleBatch:
    """Outcomes of the instances with ``seeds`` had they ingested the matrix ``A``.

    ``P`` is None, one (d, d) matrix, or a stack (R, d, d) with ``p_index``
    giving each instance's entry.  Agrees with :class:`LpSamplerStack` fed the
    same rows, up to float summation order.
    """
    A = np.asarray(A, dtype=np.float64)
    n, d = A.shape
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64)).ravel()
    m = seeds.shape[0]
    if P is None:
        AP = A[None]
    else:
        P = np.asarray(P, dtype=np.float64)
        AP = (A @ P)[None] if P.ndim == 2 else np.matmul(A[None], P)
    if p_index is None:
        if AP.shape[0] not in (1, m):
            raise ValueError("need p_index when the projector stack does not match the seeds")
        p_index = np.zeros(m, dtype=np.int64) if AP.shape[0] == 1 else np.arange(m)
    c = config
    row_mult, tail_mult = c.thresholds(n)
    norm = AmsM.layout(c.norm_eps)
    tail = AmsM.layout(c.tail_eps)
    levels = EstimatorM.default_levels(n)
    out = SampleBatch(np.zeros(m, dtype=bool), np.zeros(m, dtype=np.int64),
                      np.zeros((m, d)), np.zeros(m), np.zeros(m))
    _kernels.sampler_batch(
        np.ascontiguousarray(AP), np.asarray(p_index, dtype=np.int64), seeds, c.p,
        c.cs_rows, c.cs_buckets(n), c.top_count(), norm[0], norm[1], tail[0], tail[1],
        row_mult, tail_mult, levels, c.est_rows, c.est_buckets, EstimatorM.n_bands(n),
        TAG_SCALE, TAG_AMS, TAG_CS_SIGN, TAG_CS_BUCKET, TAG_LEVEL,
        out.ok, out.index, out.noisy, out.scale, out.fhat)
    return out


def instance_seeds(seed: int, start: int, count: int) -> np.ndarray:
    return derive_seed(seed, np.arange(start, start + count, dtype=np.int64))


def multi_sample(seed: int, A=None, P=None, p: int = 2, eps: float = 0.1, delta: float = 0.01,
                 config: SamplerConfig | None = None, updates=None, shape=None,
                 ingest: str = "stream", chunk: int = 1024) -> SampleOutcome:
    """First successful outcome among ``reps`` independent instances.

    The stream is either a final matrix ``A`` or an iterable of ``(i, j, delta)``
    updates together with ``shape=(n, d)``.  With ``ingest="stream"`` every
    instance sees every update; ``"replay"`` materializes instances from the
    final matrix in order and stops at the first success.  Both return the same
    outcome for the same seed.
    """
    config = config or SamplerConfig(p=p, eps=eps)
    if A is None:
        if updates is None or shape is None:
            raise ValueError("need a matrix or updates with a shape")
        n, d = shape
    else:
        A = np.asarray(A, dtype=np.float64)
        n, d = A.shape
    m = config.reps(n, delta)
    seeds = instance_seeds(seed, 0, m)
    if ingest == "replay":
        if A is None:
            from .streams import updates_to_matrix

            A = updates_to_matrix(updates, n, d)
        for lo in range(0, m, chunk):
            batch = replay_finalize(A, config, seeds[lo:lo + chunk], P)
            q = batch.first_success()
            if q is not None:
                return batch.outcome(q)
        return SampleOutcome(FAIL)
    if ingest != "stream":
        raise ValueError(f"unknown ingest mode {ingest!r}")
    stack = LpSamplerStack(n, d, config, seeds)
    if A is not None:
        stack.update_rows(np.arange(n), A)
    else:
        for i, j, dlt in updates:
            stack.update(i, j, dlt)
    batch = stack.finalize(P)
    q = batch.first_success()
    return SampleOutcome(FAIL) if q is None else batch.outcome(q)
