"""Noisy adaptive sampling from one pass over a turnstile stream.

All banks of sampler instances see the whole stream.  Afterwards bank ``j`` is
queried with the projector onto the orthogonal complement of the noisy rows
picked so far, so round ``j`` samples rows proportionally to the p-th power of
their distance to that span.

Two bank providers exist.  :class:`StreamBanks` keeps explicit sketches that
ingest every update.  :class:`ReplayBanks` holds only the final matrix and
evaluates an instance's sketches when that instance is queried, which is
equivalent by linearity and lets statistical harnesses run many independent
runs at once.  :func:`run_schedule` drives either provider for ``R`` runs in
parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import OrthoBasis, orthonormal_extend
from .randomness import derive_seed
from .samplers import LpSamplerStack, SamplerConfig, replay_finalize

TAG_BANK = 0xBA4C

FLOOR_ABS = 1e-12
FLOOR_REL = 1e-10
STREAM_MEMORY_LIMIT = 2 << 30  # bytes of explicit sketch state


def bank_seeds(run_seeds, bank: int, start: int, count: int) -> np.ndarray:
    """Instance seeds of ``bank`` for each run: shape (R, count)."""
    run_seeds = np.atleast_1d(np.asarray(run_seeds, dtype=np.uint64))
    q = np.arange(start, start + count, dtype=np.int64)
    return derive_seed(run_seeds[:, None], TAG_BANK, bank, q[None, :])


@dataclass
class Draw:
    """First successful instance of one bank for each queried run."""

    ok: np.ndarray
    index: np.ndarray
    noisy: np.ndarray
    fhat0: np.ndarray  # norm estimate of the bank's first instance


def stream_state_bytes(n: int, d: int, config: SamplerConfig, instances: int) -> int:
    """Rough size of the explicit sketch state of ``instances`` sampler instances."""
    ams = sum(6 * math.ceil(8 / e ** 2) for e in (config.norm_eps, config.tail_eps))
    cs = config.cs_rows * min(n, config.cs_buckets(n))
    return 8 * d * instances * (ams + cs)


class StreamBanks:
    """Banks of explicit sketches fed every update (R runs x reps instances)."""

    def __init__(self, n: int, d: int, config: SamplerConfig, run_seeds, banks: int, reps: int):
        self.n, self.d, self.config, self.reps = n, d, config, reps
        self.run_seeds = np.atleast_1d(np.asarray(run_seeds, dtype=np.uint64))
        need = stream_state_bytes(n, d, config, banks * reps * self.run_seeds.shape[0])
        if need > STREAM_MEMORY_LIMIT:
            raise ValueError(f"explicit sketches would need about {need / 2 ** 30:.1f} GiB; "
                             "use ingest='replay'")
        self.stacks = [
            LpSamplerStack(n, d, config, bank_seeds(self.run_seeds, b, 0, reps).ravel())
            for b in range(banks)
        ]

    @property
    def banks(self) -> int:
        return len(self.stacks)

    def update(self, i: int, j: int, delta: float) -> None:
        for st in self.stacks:
            st.update(i, j, delta)

    def update_rows(self, idx, rows) -> None:
        for st in self.stacks:
            st.update_rows(idx, rows)

    def draw(self, bank: int, runs: np.ndarray, P: np.ndarray) -> Draw:
        R = self.run_seeds.shape[0]
        full = np.broadcast_to(np.eye(self.d), (R, self.d, self.d)).copy()
        full[runs] = P
        batch = self.stacks[bank].finalize(np.repeat(full, self.reps, axis=0))
        ok = batch.ok.reshape(R, self.reps)[runs]
        first = np.argmax(ok, axis=1)
        flat = runs * self.reps + first
        has = ok.any(axis=1)
        return Draw(has, np.where(has, batch.index[flat], -1), batch.noisy[flat],
                    batch.fhat.reshape(R, self.reps)[runs, 0])


class ReplayBanks:
    """Banks evaluated from the final matrix, instance by instance, on demand."""

    def __init__(self, A, config: SamplerConfig, run_seeds, banks: int, reps: int,
                 chunk: int = 32, max_chunk: int = 4096):
        self.A = np.asarray(A, dtype=np.float64)
        self.n, self.d = self.A.shape
        self.config, self.banks, self.reps = config, banks, reps
        self.run_seeds = np.atleast_1d(np.asarray(run_seeds, dtype=np.uint64))
        self.chunk, self.max_chunk = chunk, max_chunk

    def draw(self, bank: int, runs: np.ndarray, P: np.ndarray) -> Draw:
        if bank >= self.banks:
            raise IndexError(f"bank {bank} requested but only {self.banks} exist")
        R = runs.shape[0]
        out = Draw(np.zeros(R, dtype=bool), np.full(R, -1), np.zeros((R, self.d)), np.zeros(R))
        pending = np.arange(R)
        start, size = 0, self.chunk
        while pending.size and start < self.reps:
            size = min(size, self.reps - start)
            seeds = bank_seeds(self.run_seeds[runs[pending]], bank, start, size).ravel()
            batch = replay_finalize(self.A, self.config, seeds, P,
                                    np.repeat(pending, size))
            ok = batch.ok.reshape(pending.size, size)
            if start == 0:
                out.fhat0[pending] = batch.fhat.reshape(pending.size, size)[:, 0]
            has = ok.any(axis=1)
            flat = np.flatnonzero(has) * size + np.argmax(ok[has], axis=1)
            hit = pending[has]
            out.ok[hit] = True
            out.index[hit] = batch.index[flat]
            out.noisy[hit] = batch.noisy[flat]
            pending = pending[~has]
            start += size
            size = min(2 * size, self.max_chunk)
        return out


@dataclass
class SampledSubspace:
    """Noisy rows picked round by round, their claimed indices and span."""

    rows: np.ndarray  # (j, d)
    indices: list[int]
    basis: OrthoBasis
    rank_exhausted: bool = False
    failed: bool = False

    @property
    def size(self) -> int:
        return len(self.indices)

    def projector(self) -> np.ndarray:
        return self.basis.projector()


@dataclass
class AdaptiveRuns:
    """Outcomes of ``R`` independent runs of one schedule; padded with -1."""

    indices: np.ndarray  # (R, T)
    rows: np.ndarray  # (R, T, d)
    count: np.ndarray  # (R,)
    exhausted: np.ndarray
    failed: np.ndarray
    bases: list = field(default_factory=list)

    def subspace(self, r: int) -> SampledSubspace:
        c = int(self.count[r])
        return SampledSubspace(self.rows[r, :c].copy(), [int(i) for i in self.indices[r, :c]],
                               self.bases[r], bool(self.exhausted[r]), bool(self.failed[r]))

    def tuples(self) -> list[tuple]:
        return [tuple(int(i) for i in row) for row in self.indices]


def run_schedule(provider, d: int, schedule, runs: int | None = None, bases=None,
                 floor_abs: float = FLOOR_ABS, floor_rel: float = FLOOR_REL) -> AdaptiveRuns:
    """Draw ``schedule[b]`` samples per batch against a frozen projector.

    ``bases`` optionally seeds each run's span (rows already chosen).  A run
    stops at a FAIL or once the residual norm estimate drops below
    ``max(floor_abs, floor_rel * first estimate)``; the remaining slots stay -1.
    """
    R = runs if runs is not None else provider.run_seeds.shape[0]
    T = int(sum(schedule))
    bases = list(bases) if bases is not None else [OrthoBasis.empty(d) for _ in range(R)]
    indices = np.full((R, T), -1, dtype=np.int64)
    rows = np.zeros((R, T, d))
    count = np.zeros(R, dtype=np.int64)
    exhausted = np.zeros(R, dtype=bool)
    failed = np.zeros(R, dtype=bool)
    ref = np.full(R, np.nan)
    bank = 0
    for size in schedule:
        alive = np.flatnonzero(~(exhausted | failed))
        if alive.size == 0:
            break
        P = np.stack([bases[r].projector() for r in alive])
        first_slot = count.copy()
        for _ in range(size):
            draw = provider.draw(bank, alive, P)
            bank += 1
            fresh = np.isnan(ref[alive])
            ref[alive[fresh]] = draw.fhat0[fresh]
            floor = np.maximum(floor_abs, floor_rel * ref[alive])
            gone = draw.fhat0 < floor
            exhausted[alive[gone]] = True
            bad = ~gone & ~draw.ok
            failed[alive[bad]] = True
            keep = ~(gone | bad)
            got = alive[keep]
            indices[got, count[got]] = draw.index[keep]
            rows[got, count[got]] = draw.noisy[keep]
            count[got] += 1
            alive, P = got, P[keep]
            if alive.size == 0:
                break
        for r in range(R):
            for slot in range(first_slot[r], count[r]):
                bases[r] = orthonormal_extend(bases[r], rows[r, slot])
    return AdaptiveRuns(indices, rows, count, exhausted, failed, bases)


class AdaptiveSampler:
    """k-round noisy adaptive sampler over one turnstile stream.

    ``ingest="stream"`` keeps explicit sketches for every bank instance;
    ``"replay"`` only accumulates the matrix and evaluates instances lazily.
    ``round_sizes`` (default ``[1] * k``) sets how many samples share a
    projector before it is refreshed.
    """

    def __init__(self, n: int, d: int, k: int, p: int = 2, eps: float = 0.1, seed: int = 0,
                 delta: float = 0.01, config: SamplerConfig | None = None,
                 ingest: str = "stream", round_sizes=None):
        if k < 0:
            raise ValueError("k must be non-negative")
        self.n, self.d, self.k = n, d, k
        self.config = config or SamplerConfig(p=p, eps=eps)
        self.seed = int(seed)
        self.round_sizes = list(round_sizes) if round_sizes is not None else [1] * k
        self.reps = self.config.reps(n, delta)
        self.ingest = ingest
        banks = int(sum(self.round_sizes))
        if ingest == "stream":
            self._banks = StreamBanks(n, d, self.config, [self.seed], banks, self.reps)
        elif ingest == "replay":
            self._A = np.zeros((n, d))
            self._nbanks = banks
        else:
            raise ValueError(f"unknown ingest mode {ingest!r}")

    def update(self, i: int, j: int, delta: float) -> None:
        if self.ingest == "stream":
            self._banks.update(i, j, delta)
        else:
            if not (0 <= i < self.n and 0 <= j < self.d):
                raise IndexError(f"update ({i}, {j}) outside {self.n} x {self.d}")
            self._A[i, j] += delta

    def update_rows(self, idx, rows) -> None:
        if self.ingest == "stream":
            self._banks.update_rows(idx, rows)
        else:
            np.add.at(self._A, np.asarray(idx), np.asarray(rows, dtype=np.float64))

    def provider(self):
        if self.ingest == "stream":
            return self._banks
        return ReplayBanks(self._A, self.config, [self.seed], self._nbanks, self.reps)

    def finalize(self, round_sizes=None) -> SampledSubspace:
        sched = self.round_sizes if round_sizes is None else list(round_sizes)
        if sum(sched) > sum(self.round_sizes):
            raise ValueError("schedule needs more banks than were created; raise k or round_sizes")
        return run_schedule(self.provider(), self.d, sched, runs=1).subspace(0)


def adaptive_finalize(sampler: AdaptiveSampler) -> SampledSubspace:
    return sampler.finalize([1] * sampler.k)


def batch_adaptive_finalize(sampler: AdaptiveSampler, round_sizes) -> SampledSubspace:
    return sampler.finalize(round_sizes)


def adaptive_runs(A, k: int, run_seeds, p: int = 2, eps: float = 0.1, delta: float = 0.01,
                  config: SamplerConfig | None = None, schedule=None,
                  ingest: str = "replay", bases=None) -> AdaptiveRuns:
    """Independent adaptive runs over the matrix ``A``, one per run seed."""
    A = np.asarray(A, dtype=np.float64)
    n, d = A.shape
    config = config or SamplerConfig(p=p, eps=eps)
    sched = list(schedule) if schedule is not None else [1] * k
    reps = config.reps(n, delta)
    banks = int(sum(sched))
    if ingest == "replay":
        provider = ReplayBanks(A, config, run_seeds, banks, reps)
    elif ingest == "stream":
        provider = StreamBanks(n, d, config, run_seeds, banks, reps)
        provider.update_rows(np.arange(n), A)
    else:
        raise ValueError(f"unknown ingest mode {ingest!r}")
    return run_schedule(provider, d, sched, bases=bases)
