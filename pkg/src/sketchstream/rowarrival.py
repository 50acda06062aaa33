"""Volume maximization when whole rows arrive one at a time.

Includes the offline greedy, a merge-and-reduce tree of composable core-sets,
a direction-grid epsilon-kernel for d <= 4 and a Gaussian embedding that
brings larger d down to that range.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .linalg import parallelepiped_volume
from .apps import SummaryResult

MAX_KERNEL_DIM = 4
MAX_GRID = 200_000
RANK_TOL = 1e-10


class UnsupportedDimension(ValueError):
    pass


def _points(ps) -> np.ndarray:
    pts = np.asarray(ps, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("expected an (n, d) array of points")
    return pts


def greedy_volume_max(ps, k: int) -> list[int]:
    """Repeatedly take the point farthest from the span of those already taken.

    Ties go to the lowest index.  Stops early once every remaining point lies
    in the current span.
    """
    pts = _points(ps)
    n, d = pts.shape
    if k < 0:
        raise ValueError("k must be non-negative")
    res = pts.copy()
    norms = np.linalg.norm(res, axis=1)
    scale = norms.max() if n else 0.0
    picks: list[int] = []
    for _ in range(min(k, n, d)):
        i = int(np.argmax(norms))
        if norms[i] <= RANK_TOL * scale or scale == 0.0:
            break
        picks.append(i)
        u = res[i] / norms[i]
        for _ in range(2):
            res -= np.outer(res @ u, u)
        norms = np.linalg.norm(res, axis=1)
        norms[picks] = 0.0
    return picks


def greedy_coreset(ps, size: int) -> list[int]:
    return greedy_volume_max(ps, size)


def merge_reduce(stream: Iterable, reduce_fn: Callable, branch: int = 4,
                 finish: Callable | None = None):
    """b-ary merge-and-reduce tree over a stream of points.

    ``reduce_fn(points) -> local indices`` shrinks a node; ``finish`` (default
    ``reduce_fn``) runs at the root.  Returns ``(global indices, peak points held)``.
    """
    if branch < 2:
        raise ValueError("branch factor must be at least 2")
    levels: list[list[tuple[np.ndarray, np.ndarray]]] = [[]]
    held = peak = 0
    for t, p in enumerate(stream):
        node = (np.array([t]), np.asarray(p, dtype=np.float64)[None, :])
        level = 0
        levels[0].append(node)
        held += 1
        peak = max(peak, held)
        while len(levels[level]) == branch:
            ids = np.concatenate([a for a, _ in levels[level]])
            pts = np.concatenate([b for _, b in levels[level]])
            keep = np.asarray(reduce_fn(pts), dtype=np.int64)
            held -= ids.shape[0] - keep.shape[0]
            levels[level] = []
            level += 1
            if level == len(levels):
                levels.append([])
            levels[level].append((ids[keep], pts[keep]))
    nodes = [node for lvl in levels for node in lvl]
    if not nodes:
        return [], 0
    ids = np.concatenate([a for a, _ in nodes])
    pts = np.concatenate([b for _, b in nodes])
    order = np.argsort(ids, kind="stable")
    ids, pts = ids[order], pts[order]
    keep = (finish or reduce_fn)(pts)
    return [int(ids[i]) for i in keep], peak


def coreset_stream(stream: Iterable, k: int, branch: int = 4, coreset_fn: Callable | None = None,
                   c: int = 3, return_peak: bool = False):
    """Stream indices of k points chosen through a tree of size-``c*k`` core-sets."""
    fn = coreset_fn or greedy_coreset
    idx, peak = merge_reduce(stream, lambda pts: fn(pts, c * k), branch,
                             finish=lambda pts: greedy_volume_max(pts, k))
    return (idx, peak) if return_peak else idx


def _hemisphere(dim: int, step: float) -> np.ndarray:
    """Unit directions covering every line through the origin within angle ``step``.

    Hyperspherical grid: each angle is sampled at spacing ``h = 2 * step /
    sqrt(dim - 1)`` (scaled by the slice radius), so moving along every
    coordinate by at most h/2 bounds the geodesic gap by ``step``.
    """
    if dim == 1:
        return np.ones((1, 1))
    h = 2.0 * step / math.sqrt(dim - 1)

    def grid(d: int, half: bool) -> list[np.ndarray]:
        if d == 2:
            span = math.pi if half else 2 * math.pi
            m = max(1, math.ceil(span / h))
            ang = (np.arange(m) + 0.5) * span / m
            return [np.array([math.cos(a), math.sin(a)]) for a in ang]
        m = max(1, math.ceil(math.pi / h))
        out = []
        for a in (np.arange(m) + 0.5) * math.pi / m:
            rad = math.sin(a)
            sub_h = h / max(rad, 1e-12)
            sub = _sphere_grid(d - 1, sub_h, half)
            out.extend(np.concatenate([[math.cos(a)], rad * v]) for v in sub)
        return out

    def _sphere_grid(d: int, hh: float, half: bool):
        nonlocal h
        saved, h = h, hh
        try:
            return grid(d, half)
        finally:
            h = saved

    return np.array(grid(dim, True))


def _fatten(pts: np.ndarray):
    """Affine frame in which the point set is fat.

    Gram-Schmidt on successive extreme points, then each axis is scaled to
    its extent, so the minimum width is bounded below by a constant that
    only depends on the dimension.
    """
    X = pts - pts[0]
    scale = float(np.max(np.linalg.norm(X, axis=1)))
    if scale == 0.0:
        return np.zeros((pts.shape[0], 0))
    R = X.copy()
    axes = []
    for _ in range(pts.shape[1]):
        norms = np.linalg.norm(R, axis=1)
        j = int(np.argmax(norms))
        if norms[j] <= RANK_TOL * scale:
            break
        u = R[j] / norms[j]
        for _ in range(2):
            R -= np.outer(R @ u, u)
        axes.append(u)
    Y = X @ np.array(axes).T
    ext = Y.max(axis=0) - Y.min(axis=0)
    return (Y - Y.min(axis=0)) / ext - 0.5


def _hull(Y: np.ndarray) -> np.ndarray:
    """Local indices of the convex hull vertices of a full-rank point set."""
    if Y.shape[1] == 1:
        return np.unique([int(np.argmin(Y[:, 0])), int(np.argmax(Y[:, 0]))])
    if Y.shape[0] <= Y.shape[1] + 1:
        return np.arange(Y.shape[0])
    try:
        return np.sort(ConvexHull(Y).vertices)
    except QhullError:
        return np.arange(Y.shape[0])


def hull_vertices(ps) -> list[int]:
    """Indices of the extreme points; an exact (zero loss) kernel."""
    pts = _points(ps)
    if pts.shape[0] == 0:
        return []
    Y = _fatten(pts)
    if Y.shape[1] == 0:
        return [0]
    return [int(i) for i in _hull(Y)]


def eps_kernel(ps, eps: float, return_directions: bool = False):
    """Indices of a subset keeping (1 - eps) of the directional width of the set.

    Starts from the hull vertices in a fat affine frame (width ratios are
    affine invariant), then keeps only the extreme points of a direction
    grid fine enough that the guarantee extends from grid directions to all
    directions.  If that grid would be too large the hull itself is returned.
    """
    pts = _points(ps)
    n, d = pts.shape
    if d > MAX_KERNEL_DIM:
        raise UnsupportedDimension(
            f"eps_kernel supports d <= {MAX_KERNEL_DIM}, got d={d}; reduce with jl_embed first")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if n == 0:
        return ([], np.zeros((0, d))) if return_directions else []
    Y = _fatten(pts)
    r = Y.shape[1]
    if r == 0:
        return ([0], np.zeros((0, d))) if return_directions else [0]
    hull = _hull(Y)
    Y = Y[hull]
    R = float(np.max(np.linalg.norm(Y, axis=1)))
    step = eps / 4.0
    while True:
        if (math.pi * math.sqrt(r - 1) / (2 * step)) ** (r - 1) > MAX_GRID:
            out = [int(i) for i in hull]
            return (out, np.zeros((0, r))) if return_directions else out
        dirs = _hemisphere(r, step)
        proj = Y @ dirs.T
        w_min = float(np.min(proj.max(axis=0) - proj.min(axis=0)))
        if step <= eps * (w_min - 2 * step * R) / (4 * R):
            break
        step /= 2.0
    keep = np.unique(np.concatenate([proj.argmax(axis=0), proj.argmin(axis=0)]))
    out = [int(hull[i]) for i in keep]
    return (out, dirs) if return_directions else out


def stream_eps_kernel(stream: Iterable, eps: float, n_hint: int | None = None,
                      branch: int = 4, block: int = 64) -> list[int]:
    """epsilon-kernel of a row stream.

    Tree nodes keep exact hull vertices, so no error accumulates across
    levels; the full eps is spent once at the root.
    """
    pts = np.array([np.asarray(p, dtype=np.float64) for p in stream])
    if pts.shape[0] == 0:
        return []
    kept_ids, kept_pts = [], []
    for start in range(0, pts.shape[0], block):
        blk = pts[start:start + block]
        keep = hull_vertices(blk)
        kept_ids.append(start + np.asarray(keep, dtype=np.int64))
        kept_pts.append(blk[keep])
    flat_ids = np.concatenate(kept_ids)
    flat_pts = np.concatenate(kept_pts)
    idx, _ = merge_reduce(iter(flat_pts), hull_vertices, branch,
                          finish=lambda p: eps_kernel(p, eps))
    return sorted(int(flat_ids[i]) for i in idx)


def jl_dimension(n: int, k: int, C: float) -> int:
    return max(k + 1, math.ceil(math.log(max(n, 2)) / C), 1)


def jl_embed(ps, C: float = 2.0, seed: int = 0, k: int = 1, G=None, r: int | None = None):
    """Right-multiply the points by a d x r Gaussian matrix with N(0, 1/r) entries.

    Returns ``(embedded, G)``.  ``G`` may be passed explicitly (identity
    embeddings in tests, shared draws across calls).
    """
    pts = _points(ps)
    n, d = pts.shape
    if G is None:
        r = r or jl_dimension(n, k, C)
        G = np.random.default_rng(seed).normal(0.0, 1.0 / math.sqrt(r), size=(d, r))
    G = np.asarray(G, dtype=np.float64)
    if G.shape[0] != d:
        raise ValueError("embedding matrix has the wrong number of rows")
    return pts @ G, G


def volume_max_row_arrival(ps, k: int, mode: str = "coreset", eps: float = 0.25,
                           branch: int = 4, c: int = 3, C: float = 2.0, seed: int = 0,
                           max_dim: int = MAX_KERNEL_DIM) -> SummaryResult:
    """k rows of the stream with large parallelepiped volume.

    Modes: ``coreset`` (greedy core-set tree), ``exp_d`` (streaming
    epsilon-kernel then greedy, d <= 4) and ``jl_then_exp_d`` (Gaussian
    embedding to at most 4 dimensions first; the original rows at the chosen
    indices are reported).
    """
    pts = _points(ps)
    n, d = pts.shape
    extra: dict = {"mode": mode}
    if mode == "coreset":
        idx, peak = coreset_stream(iter(pts), k, branch, c=c, return_peak=True)
        extra["peak_points"] = peak
    elif mode == "exp_d":
        if d > max_dim:
            raise UnsupportedDimension(
                f"exp_d needs d <= {max_dim}, got d={d}; use mode jl_then_exp_d")
        kern = stream_eps_kernel(iter(pts), eps, n, branch)
        local = greedy_volume_max(pts[kern], k)
        idx = [kern[i] for i in local]
        extra["kernel_size"] = len(kern)
    elif mode == "jl_then_exp_d":
        r = min(max_dim, jl_dimension(n, k, C))
        if r < k:
            raise UnsupportedDimension(f"k={k} cannot fit in an embedding of dimension {r}")
        emb, G = jl_embed(pts, C, seed, k, r=r)
        kern = stream_eps_kernel(iter(emb), eps, n, branch)
        local = greedy_volume_max(emb[kern], k)
        idx = [kern[i] for i in local]
        extra.update(kernel_size=len(kern), embed_dim=r)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    vol = parallelepiped_volume(pts[idx]) if idx else 1.0
    return SummaryResult("volume", vol, pts[idx], list(idx), extra)
