"""Desk-scale acceptance suite shared by the CLI and the test-suite.

Each criterion returns a :class:`CriterionResult` whose ``line()`` is the one
machine-readable report line.  ``trials`` overrides the main sample count of a
criterion (accepted samples, runs or seeds, depending on the criterion).
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adaptive import adaptive_runs
from .apps import volume_max_turnstile
from .linalg import OrthoBasis, parallelepiped_volume, row_distances
from .oracle import (
    all_volumes,
    best_rank_k_error,
    exact_adaptive_distribution,
    exact_lp2_distribution,
    exact_volume_max,
    exact_volume_sampling,
    tv_distance,
    unordered_marginal,
)
from .randomness import derive_seed
from .rowarrival import eps_kernel, greedy_volume_max, jl_embed
from .samplers import SamplerConfig, replay_finalize
from .sketches import AmsM, CountSketchM, EstimatorM, merge
from .streams import matrix_to_updates

TV_EPS = 0.1
TV_BUDGET_CAP = 0.121  # stated budget for the single-round sampler criteria


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    stats: dict
    budget: str
    runtime: float
    limit: float
    details: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        stats = " ".join(f"{k}={_fmt(v)}" for k, v in self.stats.items())
        return (f"[{status}] {self.number:>2} {self.name}: {stats} budget={self.budget} "
                f"runtime={self.runtime:.1f}s limit={self.limit:.0f}s")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _finish(number, name, ok, stats, budget, start, limit, details=None) -> CriterionResult:
    runtime = time.perf_counter() - start
    return CriterionResult(number, name, bool(ok and runtime < limit), stats, budget,
                           runtime, limit, details or [])


def binomial_floor(n: int, p: float, alpha: float = 0.01) -> int:
    """Largest c with P[Bin(n, p) < c] <= alpha (one-sided lower check)."""
    cdf = 0.0
    for c in range(n + 1):
        nxt = cdf + math.comb(n, c) * p ** c * (1 - p) ** (n - c)
        if nxt > alpha:
            return c
        cdf = nxt
    return n


# 1 ------------------------------------------------------------------------

def _feed(sketch, updates) -> None:
    if not updates:
        return
    arr = np.array(updates, dtype=np.float64)
    idx = arr[:, 0].astype(np.int64)
    rows = np.zeros((len(updates), sketch.d))
    rows[np.arange(len(updates)), arr[:, 1].astype(np.int64)] = arr[:, 2]
    sketch.update_rows(idx, rows)


def _sketch_family(n: int, d: int, seed: int):
    return [AmsM(n, d, 0.5, seed), CountSketchM(n, d, 7, 64, seed), EstimatorM(n, d, seed)]


def criterion_linearity(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    trials = trials or 100
    rng = np.random.default_rng(derive_seed(seed, 1).item())
    n, d = 64, 8
    worst = 0.0
    for t in range(trials):
        A = rng.integers(-8, 9, size=(n, d)).astype(np.float64)
        ups = matrix_to_updates(A, seed=int(rng.integers(2 ** 31)), splits=2)
        cut = int(rng.integers(0, len(ups) + 1))
        sk_seed = int(rng.integers(2 ** 63))
        whole, left, right = (_sketch_family(n, d, sk_seed) for _ in range(3))
        for a, b, c in zip(whole, left, right):
            _feed(a, ups)
            _feed(b, ups[:cut])
            _feed(c, ups[cut:])
            worst = max(worst, float(np.max(np.abs(merge(b, c).dense() - a.dense()))))
    return _finish(1, "linearity", worst <= 1e-9, {"trials": trials, "max_cell_diff": worst},
                   "1e-09", start, 5.0)


# 2 ------------------------------------------------------------------------

def _random_projector(rng, d: int) -> np.ndarray:
    k = int(rng.integers(1, d))
    Q, _ = np.linalg.qr(rng.normal(size=(d, k)))
    return np.eye(d) - Q @ Q.T


def criterion_postprocessing(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    trials = trials or 50
    rng = np.random.default_rng(derive_seed(seed, 2).item())
    n, d = 64, 8
    worst = 0.0
    for _ in range(trials):
        A = rng.integers(-8, 9, size=(n, d)).astype(np.float64)
        P = _random_projector(rng, d)
        sk_seed = int(rng.integers(2 ** 63))
        for a, b in zip(_sketch_family(n, d, sk_seed), _sketch_family(n, d, sk_seed)):
            _feed(a, matrix_to_updates(A, seed=int(rng.integers(2 ** 31)), splits=2))
            b.update_rows(np.arange(n), A @ P)
            worst = max(worst, float(np.max(np.abs(a.dense() @ P - b.dense()))))
    return _finish(2, "postproc", worst <= 1e-9, {"trials": trials, "max_cell_diff": worst},
                   "1e-09", start, 10.0)


# 3, 4 --------------------------------------------------------------------

def sampler_instances() -> list[tuple[str, np.ndarray, np.ndarray | None]]:
    """Five fixed 8 x 4 instances, entries in [-8, 8]; the last one uses a projector."""
    rng = np.random.default_rng(20240601)
    base = np.zeros((8, 4))
    base[0, 0], base[1, 1] = 2.0, 1.0
    out = [("two-rows", base, None)]
    for name in ("random-a", "random-b", "sparse"):
        A = rng.integers(-8, 9, size=(8, 4)).astype(np.float64)
        if name == "sparse":
            A[rng.random((8, 4)) < 0.6] = 0.0
            A[3] = 0.0
        out.append((name, A, None))
    A = rng.integers(-8, 9, size=(8, 4)).astype(np.float64)
    out.append(("projected", A, _random_projector(rng, 4)))
    return out


def collect_samples(A, P, config: SamplerConfig, target: int, seed: int,
                    chunk: int = 1 << 18) -> dict:
    """Accepted single-instance outcomes over consecutive instance seeds."""
    A = np.asarray(A, dtype=np.float64)
    idx, ratio, drawn = [], [], 0
    truth = np.linalg.norm(A if P is None else A @ P, axis=1)
    got = 0
    while got < target:
        seeds = derive_seed(seed, np.arange(drawn, drawn + chunk, dtype=np.int64))
        batch = replay_finalize(A, config, seeds, P)
        drawn += chunk
        hit = np.flatnonzero(batch.ok)[: target - got]
        idx.append(batch.index[hit])
        ratio.append(np.linalg.norm(batch.noisy[hit], axis=1) / truth[batch.index[hit]])
        got += hit.size
    idx = np.concatenate(idx)
    return {"counts": Counter(int(i) for i in idx), "ratio": np.concatenate(ratio),
            "drawn": drawn}


def tv_budget(T: int, eps: float = TV_EPS, extra_log: float = 0.0) -> float:
    return eps + 3.0 * math.sqrt((math.log(200) + extra_log) / T)


def _criterion_sampler(number: int, name: str, p: int, limit: float, seed: int,
                       trials: int | None) -> CriterionResult:
    start = time.perf_counter()
    T = trials or 50_000
    config = SamplerConfig(p=p, eps=TV_EPS)
    budget = min(TV_BUDGET_CAP, tv_budget(T))
    worst_tv, worst_time, fidelity, details = 0.0, 0.0, 1.0, []
    for q, (label, A, P) in enumerate(sampler_instances()):
        t0 = time.perf_counter()
        res = collect_samples(A, P, config, T, int(derive_seed(seed, number, q)[0]))
        tv = tv_distance(exact_lp2_distribution(A, P, p), res["counts"])
        within = float(np.mean(np.abs(res["ratio"] - 1) <= 2 * TV_EPS))
        el = time.perf_counter() - t0
        worst_tv, worst_time = max(worst_tv, tv), max(worst_time, el)
        fidelity = min(fidelity, within)
        details.append(f"{label}: tv={tv:.4f} accept={T / res['drawn']:.4f} "
                       f"fidelity={within:.4f} time={el:.1f}s")
    ok = worst_tv <= budget and worst_time < limit
    res = _finish(number, name, ok, {"T": T, "max_tv": worst_tv, "min_fidelity": fidelity,
                                     "max_instance_s": worst_time},
                  f"{budget:.4f}", start, 5 * limit, details)
    return res


def criterion_tv_l22(seed: int = 0, trials: int | None = None) -> CriterionResult:
    return _criterion_sampler(3, "tv-l22", 2, 120.0, seed, trials)


def criterion_tv_l12(seed: int = 0, trials: int | None = None) -> CriterionResult:
    return _criterion_sampler(4, "tv-l12", 1, 180.0, seed, trials)


# 5 ------------------------------------------------------------------------

def adaptive_instances() -> list[tuple[str, np.ndarray]]:
    three = np.array([[10.0, 0.0], [10.0, 0.0], [0.0, 1.0]])
    ortho = 3.0 * np.eye(4)
    return [("three-rows", three), ("orthonormal", ortho)]


def adaptive_tally(A, k: int, runs: int, seed: int, p: int = 2, eps: float = TV_EPS,
                   batch: int = 5000):
    counts: Counter = Counter()
    failed = 0
    for lo in range(0, runs, batch):
        seeds = derive_seed(seed, np.arange(lo, min(lo + batch, runs), dtype=np.int64))
        out = adaptive_runs(A, k, seeds, p=p, eps=eps)
        failed += int(out.failed.sum())
        counts.update(t for t, f in zip(out.tuples(), out.failed) if not f)
    return counts, failed


def criterion_adaptive_tv(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    T = trials or 50_000
    k = 2
    budget = tv_budget(T, extra_log=k * math.log(3))
    worst, details, failed_total = 0.0, [], 0
    for q, (label, A) in enumerate(adaptive_instances()):
        counts, failed = adaptive_tally(A, k, T, int(derive_seed(seed, 5, q)[0]))
        tv = tv_distance(exact_adaptive_distribution(A, k, 2), counts)
        worst = max(worst, tv)
        failed_total += failed
        details.append(f"{label}: tv={tv:.4f} failed_runs={failed}")
    return _finish(5, "adaptive-tv", worst <= budget,
                   {"T": T, "max_tv": worst, "failed_runs": failed_total},
                   f"{budget:.4f}", start, 600.0, details)


# 6 ------------------------------------------------------------------------

def criterion_distortion(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    runs = trials or 100
    A = np.random.default_rng(derive_seed(seed, 6).item()).normal(size=(16, 5))
    out = adaptive_runs(A, 2, derive_seed(seed, 6, np.arange(runs)), p=2, eps=TV_EPS)
    good, ratios = 0, []
    for r in range(runs):
        sub = out.subspace(r)
        noisy = np.linalg.norm(row_distances(A, sub.basis))
        true = np.linalg.norm(row_distances(A, OrthoBasis.from_rows(A[sub.indices], 5)))
        ratio = noisy / true if true > 0 else (1.0 if noisy == 0 else math.inf)
        ratios.append(ratio)
        good += (not sub.failed) and abs(ratio - 1) <= 0.25
    need = math.ceil(0.75 * runs)
    return _finish(6, "distortion", good >= need,
                   {"runs": runs, "within": good, "median_ratio": float(np.median(ratios))},
                   f">={need}", start, 120.0)


# 7 ------------------------------------------------------------------------

def criterion_rss(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    runs = trials or 100
    k = 2
    A = np.random.default_rng(derive_seed(seed, 7).item()).normal(size=(32, 6))
    bound = 16 * math.factorial(k + 1) * best_rank_k_error(A, k) ** 2
    out = adaptive_runs(A, k, derive_seed(seed, 7, np.arange(runs)), p=2, eps=TV_EPS)
    costs = np.array([float(np.sum(row_distances(A, out.subspace(r).basis) ** 2))
                      for r in range(runs)])
    good = int(np.sum((costs <= bound) & ~out.failed))
    need = binomial_floor(runs, 2 / 3)
    return _finish(7, "rss", good >= need,
                   {"runs": runs, "within": good, "max_ratio": float(costs.max() * 96 / bound)},
                   f">={need}", start, 120.0)


# 8 ------------------------------------------------------------------------

def criterion_volmax(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    runs = trials or 100
    k, alpha = 3, 2.0
    A = np.random.default_rng(derive_seed(seed, 8).item()).normal(size=(16, 5))
    _, opt = exact_volume_max(A, k)
    limit_ratio = alpha ** k * math.factorial(k)
    ratios = []
    for r in range(runs):
        res = volume_max_turnstile(A, k, alpha, int(derive_seed(seed, 8, r)[0]), ingest="replay")
        ratios.append(opt / res.cost if res.cost > 0 else math.inf)
    ratios = np.array(ratios)
    good = int(np.sum(ratios <= limit_ratio))
    need = binomial_floor(runs, 2 / 3)
    return _finish(8, "volmax", good >= need,
                   {"runs": runs, "within": good, "median_ratio": float(np.median(ratios))},
                   f">={need} at ratio<={limit_ratio:g}", start, 180.0)


# 9 ------------------------------------------------------------------------

def criterion_greedy(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    count = trials or 200
    rng = np.random.default_rng(derive_seed(seed, 9).item())
    fails, worst = 0, 0.0
    for _ in range(count):
        n = int(rng.integers(4, 13))
        d = int(rng.integers(3, 7))
        k = int(rng.integers(1, 4))
        A = rng.normal(size=(n, d)) * rng.uniform(0.1, 10, size=(n, 1))
        _, opt = exact_volume_max(A, k)
        vol = parallelepiped_volume(A[greedy_volume_max(A, k)])
        ratio = opt / vol
        worst = max(worst, ratio / math.factorial(k))
        fails += ratio > math.factorial(k) * (1 + 1e-9)
    return _finish(9, "greedy", fails == 0,
                   {"instances": count, "failures": fails, "max_ratio_over_kfact": worst},
                   "0 failures", start, 60.0)


# 10 -----------------------------------------------------------------------

def disk_points(n: int = 1000, seed: int = 10) -> np.ndarray:
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def width_ratios(P, Q, directions: int = 360) -> np.ndarray:
    ang = np.arange(directions) * (2 * np.pi / directions)
    D = np.column_stack([np.cos(ang), np.sin(ang)])
    return np.ptp(Q @ D.T, axis=0) / np.ptp(P @ D.T, axis=0)


def criterion_kernel(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    P = disk_points(trials or 1000, int(derive_seed(seed, 10)[0].item() % 2 ** 32))
    Q = P[eps_kernel(P, 0.25)]
    worst = float(width_ratios(P, Q).min())
    return _finish(10, "kernel", worst >= 0.75 and len(Q) <= 64,
                   {"size": len(Q), "min_width_ratio": worst}, "ratio>=0.75,size<=64",
                   start, 10.0)


# 11 -----------------------------------------------------------------------

def criterion_jl(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    count = trials or 50
    k, C = 3, 2.0
    A = np.random.default_rng(derive_seed(seed, 11).item()).normal(size=(14, 10))
    before = all_volumes(A, k)
    opt_before = max(before.values())
    grow_cap = (math.sqrt(2 * C * k) + 2) ** k
    good, shrink_worst, grow_worst = 0, 0.0, 0.0
    for g in range(count):
        emb, _ = jl_embed(A, C, int(derive_seed(seed, 11, g)[0]), k)
        after = all_volumes(emb, k)
        shrink = opt_before / max(after.values())
        grow = max(after[T] / v for T, v in before.items() if v > 0)
        shrink_worst, grow_worst = max(shrink_worst, shrink), max(grow_worst, grow)
        good += shrink <= 2 ** k and grow <= grow_cap
    need = math.ceil(0.9 * count)
    return _finish(11, "jl", good >= need,
                   {"seeds": count, "within": good, "max_shrink": shrink_worst,
                    "max_growth": grow_worst},
                   f">={need} at shrink<={2 ** k},growth<={grow_cap:.4g}", start, 180.0)


# 12 -----------------------------------------------------------------------

def criterion_volsample(seed: int = 0, trials: int | None = None) -> CriterionResult:
    start = time.perf_counter()
    count = trials or 50
    k = 2
    rng = np.random.default_rng(derive_seed(seed, 12).item())
    fails, worst = 0, 0.0
    for _ in range(count):
        A = rng.normal(size=(6, 3))
        q = unordered_marginal(exact_adaptive_distribution(A, k, 2))
        pT = exact_volume_sampling(A, k).as_dict()
        for T, qv in q.items():
            ratio = qv / (math.factorial(k) * pT[T])
            worst = max(worst, ratio)
            fails += ratio > 1 + 1e-9
    return _finish(12, "volsample", fails == 0,
                   {"instances": count, "failures": fails, "max_q_over_kfact_p": worst},
                   "0 failures", start, 30.0)


CRITERIA: dict[str, Callable[..., CriterionResult]] = {
    "linearity": criterion_linearity,
    "postproc": criterion_postprocessing,
    "tv-l22": criterion_tv_l22,
    "tv-l12": criterion_tv_l12,
    "adaptive-tv": criterion_adaptive_tv,
    "distortion": criterion_distortion,
    "rss": criterion_rss,
    "volmax": criterion_volmax,
    "greedy": criterion_greedy,
    "kernel": criterion_kernel,
    "jl": criterion_jl,
    "volsample": criterion_volsample,
}


def run_suite(name: str, seed: int = 0, trials: int | None = None) -> list[CriterionResult]:
    if name == "all":
        return [fn(seed, trials) for fn in CRITERIA.values()]
    if name not in CRITERIA:
        raise KeyError(name)
    return [CRITERIA[name](seed, trials)]
