"""Exact, brute-force reference distributions and optima for small inputs."""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Mapping

import numpy as np

from .linalg import OrthoBasis, orthonormal_extend, parallelepiped_volume, row_distances

PAD = -1
MAX_SUBSETS = 10 ** 6


class SizeGuardError(ValueError):
    """The requested enumeration is too large to run exactly."""


class UndefinedDistribution(ValueError):
    pass


@dataclass(frozen=True)
class ExactDistribution:
    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (len(self.support),):
            raise ValueError("support and probabilities differ in length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("not a probability vector")
        object.__setattr__(self, "probs", probs)

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs.tolist()))

    def prob(self, key: Hashable) -> float:
        return self.as_dict().get(key, 0.0)


def _from_weights(weights: Mapping) -> ExactDistribution:
    keys = sorted(weights)
    w = np.array([weights[k] for k in keys], dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise UndefinedDistribution("all weights are zero")
    return ExactDistribution(tuple(keys), w / total)


def _ap(A, P) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    return A if P is None else A @ np.asarray(P, dtype=np.float64)


def exact_lp2_distribution(A, P=None, p: int = 2) -> ExactDistribution:
    """Row ``i`` with probability ``||A_i P||^p / sum_j ||A_j P||^p``."""
    norms = np.linalg.norm(_ap(A, P), axis=1) ** p
    if not norms.sum() > 0:
        raise UndefinedDistribution("A P is the zero matrix")
    return _from_weights({i: float(v) for i, v in enumerate(norms)})


def exact_adaptive_distribution(A, k: int, p: int = 2, floor_rel: float = 1e-10,
                                floor_abs: float = 1e-12) -> ExactDistribution:
    """Law of the ordered index tuple drawn by k rounds of adaptive sampling.

    A path whose residual matrix vanishes (L_{p,2} norm below the floor) before
    round k stops there; its probability goes to the tuple padded with -1.
    """
    A = np.asarray(A, dtype=np.float64)
    n, d = A.shape
    if n > 10 or k > 3:
        raise SizeGuardError(f"exact adaptive law limited to n <= 10, k <= 3 (got {n}, {k})")
    if k < 0:
        raise ValueError("k must be non-negative")
    weights: dict = defaultdict(float)
    first = float(np.sum(np.linalg.norm(A, axis=1) ** p)) ** (1 / p)
    if not first > 0:
        raise UndefinedDistribution("A is the zero matrix")
    floor = max(floor_abs, floor_rel * first)
    # residuals this small relative to the row are round-off, not mass
    row_tol = (floor_rel * np.linalg.norm(A, axis=1)) ** p

    def walk(prefix: tuple, basis: OrthoBasis, mass: float) -> None:
        if len(prefix) == k:
            weights[prefix] += mass
            return
        dist = row_distances(A, basis) ** p
        dist[dist <= row_tol] = 0.0
        total = float(dist.sum())
        if total ** (1 / p) < floor:
            weights[prefix + (PAD,) * (k - len(prefix))] += mass
            return
        for i in range(n):
            if dist[i] > 0:
                walk(prefix + (i,), orthonormal_extend(basis, A[i]), mass * dist[i] / total)

    walk((), OrthoBasis.empty(d), 1.0)
    return _from_weights(weights)


def _check_subsets(n: int, k: int) -> None:
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if math.comb(n, k) > MAX_SUBSETS:
        raise SizeGuardError(f"C({n}, {k}) subsets exceed the enumeration limit {MAX_SUBSETS}")


def exact_volume_sampling(A, k: int) -> ExactDistribution:
    """k-subsets (sorted tuples) with probability proportional to squared simplex volume."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    _check_subsets(n, k)
    fact = math.factorial(k)
    weights = {T: (parallelepiped_volume(A[list(T)]) / fact) ** 2
               for T in itertools.combinations(range(n), k)}
    return _from_weights(weights)


def unordered_marginal(dist: ExactDistribution) -> dict:
    """Aggregate an ordered-tuple law over orderings (sorted-tuple keys)."""
    out: dict = defaultdict(float)
    for key, pr in zip(dist.support, dist.probs):
        out[tuple(sorted(key))] += pr
    return dict(out)


def exact_volume_max(A, k: int) -> tuple[tuple, float]:
    """Exhaustive maximum-volume k-subset; lexicographically smallest on ties."""
    A = np.asarray(A, dtype=np.float64)
    _check_subsets(A.shape[0], k)
    best, best_vol = None, -1.0
    for T in itertools.combinations(range(A.shape[0]), k):
        vol = parallelepiped_volume(A[list(T)])
        if vol > best_vol:
            best, best_vol = T, vol
    return best, best_vol


def all_volumes(A, k: int) -> dict:
    A = np.asarray(A, dtype=np.float64)
    _check_subsets(A.shape[0], k)
    return {T: parallelepiped_volume(A[list(T)]) for T in itertools.combinations(range(A.shape[0]), k)}


def svd_basis(A, k: int) -> OrthoBasis:
    """Top-k right singular vectors of A."""
    A = np.asarray(A, dtype=np.float64)
    _, _, vt = np.linalg.svd(A, full_matrices=False)
    return OrthoBasis(A.shape[1], vt[:k])


def best_rank_k_error(A, k: int, p: int = 2) -> float:
    """p=2: ||A - A_k||_F.  p=1: sum of row distances to the top-k SVD subspace.

    The p=1 value is a reference upper bound on the optimum, not the optimum.
    """
    A = np.asarray(A, dtype=np.float64)
    if p == 2:
        s = np.linalg.svd(A, compute_uv=False)
        return float(np.sqrt(np.sum(s[k:] ** 2)))
    if p == 1:
        return float(row_distances(A, svd_basis(A, k)).sum())
    raise ValueError("p must be 1 or 2")


def best_rank_k_error_eigh(A, k: int) -> float:
    """Independent p=2 path through the eigenvalues of A^T A."""
    A = np.asarray(A, dtype=np.float64)
    ev = np.clip(np.linalg.eigvalsh(A.T @ A), 0.0, None)[::-1]
    return float(np.sqrt(np.sum(ev[k:])))


def tv_distance(p, counts: Mapping) -> float:
    """Half the L1 distance between a law and the empirical law of ``counts``."""
    law = p.as_dict() if isinstance(p, ExactDistribution) else dict(p)
    total = float(sum(counts.values()))
    if total <= 0:
        raise ValueError("no observations")
    keys = set(law) | set(counts)
    return 0.5 * sum(abs(law.get(key, 0.0) - counts.get(key, 0) / total) for key in keys)
