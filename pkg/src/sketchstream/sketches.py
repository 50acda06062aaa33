"""Linear, mergeable matrix sketches with post-stream right multiplication.

Each sketch class holds ``m`` independent instances stacked along a leading
axis, one per seed.  A single sketch is simply ``m == 1``.  Every query takes
the post-processing matrix ``P`` either shared, shape ``(d, d)``, or per
instance, shape ``(m, d, d)``, and works on ``state @ P``: the stored
accumulators are linear in the rows, so multiplying them on the right is the
same as having streamed the rows of ``A @ P``.

Stream rows can be fed one coordinate at a time (``update``) or as a block of
row increments (``update_rows``).  The two are equivalent up to float
summation order.
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

from .randomness import (
    buckets_from_hash,
    hash64,
    sign_block,
    signs_from_hash,
)

TAG_AMS = 1 << 40
TAG_CS_SIGN = 2 << 40
TAG_CS_BUCKET = 3 << 40
TAG_LEVEL = 4 << 40

FORMAT_MAGIC = b"SKETCHSTREAM"
FORMAT_VERSION = 1


class SketchMismatch(ValueError):
    """Raised when combining sketches built with different parameters."""


def _seeds(seeds) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(seeds))
    if arr.dtype != np.uint64:
        arr = np.array([int(s) & 0xFFFFFFFFFFFFFFFF for s in arr.ravel()], dtype=np.uint64)
    return arr.ravel()


def _apply_p(x: np.ndarray, P, lead: int) -> np.ndarray:
    """Right-multiply ``x`` (instance axis first) by shared or per-instance P.

    ``lead`` is the number of axes between the instance axis and the last.
    """
    if P is None:
        return x
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 2:
        return x @ P
    return x @ P.reshape((P.shape[0],) + (1,) * (lead - 1) + P.shape[1:])


class _Sketch:
    kind = ""

    def __init__(self, n: int, d: int, seeds):
        if n < 1 or d < 1:
            raise ValueError(f"need n, d >= 1, got {n}, {d}")
        self.n = int(n)
        self.d = int(d)
        self.seeds = _seeds(seeds)

    @property
    def m(self) -> int:
        return self.seeds.shape[0]

    def _check_index(self, i: int, j: int) -> None:
        if not 0 <= i < self.n:
            raise IndexError(f"row index {i} outside [0, {self.n})")
        if not 0 <= j < self.d:
            raise IndexError(f"column index {j} outside [0, {self.d})")

    def _rows_block(self, idx, rows):
        idx = np.asarray(idx, dtype=np.int64)
        rows = np.asarray(rows, dtype=np.float64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError("row index out of range")
        if rows.shape[-1] != self.d:
            raise ValueError(f"rows have {rows.shape[-1]} columns, sketch has {self.d}")
        if rows.ndim == 2:
            rows = rows[None]
        return idx, rows

    def params(self) -> dict:
        raise NotImplementedError

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "version": FORMAT_VERSION,
            "n": self.n,
            "d": self.d,
            "seeds": [format(int(s), "#018x") for s in self.seeds],
            "params": self.params(),
        }

    def _check_compatible(self, other: "_Sketch") -> None:
        if type(self) is not type(other) or self.header() != other.header():
            raise SketchMismatch("sketches differ in kind, seeds, shape or parameters")


class AmsM(_Sketch):
    """Signed-row accumulators estimating ||A P - M||_F.

    Layout: ``groups`` groups of ``per_group`` copies; mean of squared norms
    within a group, median across groups.
    """

    kind = "ams"

    def __init__(self, n: int, d: int, eps: float = 0.2, seeds=0, groups: int = 6,
                 per_group: int | None = None):
        super().__init__(n, d, seeds)
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps = float(eps)
        self.groups = int(groups)
        self.per_group = int(per_group or self.layout(eps, groups)[1])
        self.acc = np.zeros((self.m, self.copies, d))

    @staticmethod
    def layout(eps: float, groups: int = 6) -> tuple[int, int]:
        """(groups, copies per group) for a target relative error."""
        return groups, math.ceil(8.0 / eps ** 2)

    @property
    def copies(self) -> int:
        return self.groups * self.per_group

    def params(self) -> dict:
        return {"eps": self.eps, "groups": self.groups, "per_group": self.per_group}

    def signs(self, keys) -> np.ndarray:
        """Signs of ``keys`` ((q,) or (m, q)) for every copy: shape (m, q, copies)."""
        keys = np.asarray(keys, dtype=np.int64)
        if keys.ndim == 1:
            keys = keys[None, :]
        return sign_block(self.seeds[:, None], TAG_AMS, keys, self.copies)

    def update(self, i: int, j: int, delta: float) -> None:
        self._check_index(i, j)
        delta = np.reshape(np.asarray(delta, dtype=np.float64), (-1, 1))
        self.acc[:, :, j] += delta * self.signs([i])[:, 0, :]

    def update_rows(self, idx, rows) -> None:
        idx, rows = self._rows_block(idx, rows)
        s = self.signs(idx)
        self.acc += np.matmul(s.transpose(0, 2, 1), rows)

    def estimate(self, P=None, offset_idx=None, offset_rows=None) -> np.ndarray:
        """Median-of-means estimate of ||A P - M||_F for every instance.

        ``M`` is sparse: rows ``offset_rows`` (m, q, d) placed at indices
        ``offset_idx`` (m, q) or (q,).
        """
        v = _apply_p(self.acc, P, 1)
        if offset_idx is not None:
            offset_rows = np.asarray(offset_rows, dtype=np.float64)
            if offset_rows.ndim == 2:
                offset_rows = offset_rows[None]
            s = self.signs(offset_idx)
            v = v - np.matmul(s.transpose(0, 2, 1), offset_rows)
        sq = np.einsum("mcd,mcd->mc", v, v)
        means = sq.reshape(self.m, self.groups, self.per_group).mean(axis=2)
        return np.sqrt(np.median(means, axis=1))

    def subset(self, idx) -> "AmsM":
        out = AmsM.__new__(AmsM)
        _Sketch.__init__(out, self.n, self.d, self.seeds[idx])
        out.eps, out.groups, out.per_group = self.eps, self.groups, self.per_group
        out.acc = self.acc[idx].copy()
        return out

    def merge(self, other: "AmsM") -> "AmsM":
        self._check_compatible(other)
        out = self.subset(np.arange(self.m))
        out.acc += other.acc
        return out

    def dense(self) -> np.ndarray:
        return self.acc

    def _load_dense(self, arr: np.ndarray) -> None:
        self.acc = arr.reshape(self.m, self.copies, self.d).copy()


class CountSketchM(_Sketch):
    """r x b table of R^d buckets recovering heavy rows of A P.

    Only touched cells are stored: sorted flat cell ids
    ``(instance * r + table_row) * b + bucket`` with a matching value array.
    """

    kind = "countsketch"

    def __init__(self, n: int, d: int, rows: int = 7, buckets: int = 64, seeds=0):
        super().__init__(n, d, seeds)
        if rows < 1 or buckets < 1:
            raise ValueError("rows and buckets must be positive")
        self.r = int(rows)
        self.b = int(buckets)
        self.keys = np.zeros(0, dtype=np.int64)
        self.vals = np.zeros((0, d))

    def params(self) -> dict:
        return {"rows": self.r, "buckets": self.b}

    def hashes(self, keys):
        """Signs and buckets, each (m, r, q), for keys of shape (q,) or (m, q)."""
        keys = np.asarray(keys, dtype=np.int64)
        if keys.ndim == 1:
            keys = keys[None, :]
        seeds = self.seeds[:, None, None]
        tab = np.arange(self.r, dtype=np.uint64)[None, :, None]
        keys = keys[:, None, :]
        sg = signs_from_hash(hash64(seeds, np.uint64(TAG_CS_SIGN) + tab, keys))
        bk = buckets_from_hash(hash64(seeds, np.uint64(TAG_CS_BUCKET) + tab, keys), self.b)
        return sg, bk

    def _flat(self, bk: np.ndarray) -> np.ndarray:
        inst = np.arange(self.m, dtype=np.int64).reshape(-1, 1, 1)
        tab = np.arange(self.r, dtype=np.int64).reshape(1, -1, 1)
        return (inst * self.r + tab) * self.b + bk

    def _add(self, keys: np.ndarray, vals: np.ndarray, unique: bool = False) -> None:
        if keys.size == 0:
            return
        nnz = self.keys.shape[0]
        if unique and nnz:
            pos = np.searchsorted(self.keys, keys)
            pos_c = np.minimum(pos, nnz - 1)
            if np.all(self.keys[pos_c] == keys):
                self.vals[pos_c] += vals
                return
        all_keys = np.concatenate([self.keys, keys])
        all_vals = np.concatenate([self.vals, vals])
        order = np.argsort(all_keys, kind="stable")
        all_keys = all_keys[order]
        starts = np.flatnonzero(np.r_[True, all_keys[1:] != all_keys[:-1]])
        self.keys = all_keys[starts]
        self.vals = np.add.reduceat(all_vals[order], starts, axis=0)

    def update(self, i: int, j: int, delta, mask=None) -> None:
        self._check_index(i, j)
        sg, bk = self.hashes([i])
        keys = self._flat(bk)[:, :, 0]
        vals = np.zeros(keys.shape + (self.d,))
        vals[:, :, j] = np.reshape(np.asarray(delta, dtype=np.float64), (-1, 1)) * sg[:, :, 0]
        if mask is not None:
            keep = np.broadcast_to(np.asarray(mask, dtype=bool).reshape(-1, 1), keys.shape)
            keys, vals = keys[keep], vals[keep]
        self._add(keys.ravel(), vals.reshape(-1, self.d), unique=True)

    def update_rows(self, idx, rows, mask=None) -> None:
        """Add row increments ``rows`` ((q, d) shared or (m, q, d)) at ``idx``.

        ``mask`` (m, q) drops the increments of masked-out (instance, row) pairs.
        """
        idx, rows = self._rows_block(idx, rows)
        sg, bk = self.hashes(idx)
        keys = self._flat(bk)
        vals = sg[..., None] * rows[:, None, :, :]
        if mask is not None:
            keep = np.broadcast_to(np.asarray(mask, dtype=bool)[:, None, :], keys.shape)
            keys, vals = keys[keep], vals[keep]
        self._add(keys.ravel(), vals.reshape(-1, self.d))

    def _cells(self, flat: np.ndarray) -> np.ndarray:
        out = np.zeros(flat.shape + (self.d,))
        nnz = self.keys.shape[0]
        if nnz == 0:
            return out
        pos = np.minimum(np.searchsorted(self.keys, flat), nnz - 1)
        hit = self.keys[pos] == flat
        out[hit] = self.vals[pos[hit]]
        return out

    def query(self, P=None, idx=None):
        """Noisy estimates of rows ``idx`` of A P.

        Returns ``(est, norms)`` of shapes (m, q, d) and (m, q).  For each row
        the r candidates ``sign * cell * P`` are ranked by norm and the one at
        the median norm is kept, lowest table row on ties.
        """
        if idx is None:
            idx = np.arange(self.n)
        idx = np.asarray(idx, dtype=np.int64)
        sg, bk = self.hashes(idx)
        cand = sg[..., None] * self._cells(self._flat(bk))
        cand = _apply_p(cand, P, 2)
        cn = np.linalg.norm(cand, axis=-1)
        med = np.sort(cn, axis=1)[:, (self.r - 1) // 2, :]
        pick = np.argmax(cn == med[:, None, :], axis=1)
        est = np.take_along_axis(cand, pick[:, None, :, None], axis=1)[:, 0]
        return est, np.take_along_axis(cn, pick[:, None, :], axis=1)[:, 0]

    def top_rows(self, P=None, count: int = 1):
        """The ``count`` rows with largest estimated norm, lowest index on ties.

        Returns ``(idx, est, norms)`` of shapes (m, c), (m, c, d), (m, c).
        """
        count = min(int(count), self.n)
        est, norms = self.query(P)
        order = np.argsort(-norms, axis=1, kind="stable")[:, :count]
        return (order,
                np.take_along_axis(est, order[:, :, None], axis=1),
                np.take_along_axis(norms, order, axis=1))

    def subset(self, idx) -> "CountSketchM":
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        out = CountSketchM(self.n, self.d, self.r, self.b, self.seeds[idx])
        per = self.r * self.b
        remap = np.full(self.m, -1, dtype=np.int64)
        remap[idx] = np.arange(idx.shape[0])
        new_inst = remap[self.keys // per]
        keep = new_inst >= 0
        keys = new_inst[keep] * per + self.keys[keep] % per
        order = np.argsort(keys, kind="stable")
        out.keys, out.vals = keys[order], self.vals[keep][order]
        return out

    def merge(self, other: "CountSketchM") -> "CountSketchM":
        self._check_compatible(other)
        out = self.subset(np.arange(self.m))
        out._add(other.keys, other.vals)
        return out

    def dense(self) -> np.ndarray:
        out = np.zeros((self.m * self.r * self.b, self.d))
        out[self.keys] = self.vals
        return out.reshape(self.m, self.r, self.b, self.d)

    def _load_dense(self, arr: np.ndarray) -> None:
        flat = arr.reshape(-1, self.d)
        keys = np.flatnonzero(np.any(flat != 0.0, axis=1))
        self.keys, self.vals = keys.astype(np.int64), flat[keys].copy()


class EstimatorM(_Sketch):
    """Constant-factor L_{1,2} estimator from nested subsampling levels.

    Level ``j`` keeps each row with probability ``2**-j`` (levels nested) and
    runs its own CountSketchM.  At query time rows are binned into dyadic norm
    bands below a coarse bound taken from level 0, every band is counted at the
    shallowest level light enough to recover it, and counts are rescaled by
    ``2**j``.
    """

    kind = "estimator"

    def __init__(self, n: int, d: int, seeds=0, rows: int = 5, buckets: int = 64,
                 levels: int | None = None):
        super().__init__(n, d, seeds)
        self.levels = int(levels or self.default_levels(n))
        self.r0 = int(rows)
        self.b0 = int(buckets)
        self.sketches = [
            CountSketchM(n, d, rows, buckets, seeds=self._level_seeds(j))
            for j in range(self.levels)
        ]

    @staticmethod
    def default_levels(n: int) -> int:
        return math.ceil(math.log2(n)) + 1 if n > 1 else 1

    @staticmethod
    def n_bands(n: int) -> int:
        return max(1, math.ceil(math.log2(4 * n * n)))

    def _level_seeds(self, j: int) -> np.ndarray:
        from .randomness import derive_seed

        return derive_seed(self.seeds, j)

    def params(self) -> dict:
        return {"rows": self.r0, "buckets": self.b0, "levels": self.levels}

    def depth(self, keys) -> np.ndarray:
        """Deepest level containing each key: shape (m, q)."""
        keys = np.asarray(keys, dtype=np.int64)
        if keys.ndim == 1:
            keys = keys[None, :]
        h = hash64(self.seeds[:, None], TAG_LEVEL, keys)
        depth = np.zeros(h.shape, dtype=np.int64)
        for j in range(1, self.levels):
            depth += (h >> np.uint64(64 - j)) == 0
        return depth

    def update(self, i: int, j: int, delta) -> None:
        self._check_index(i, j)
        delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), (self.m,))
        dep = self.depth([i])[:, 0]
        for lev, sk in enumerate(self.sketches):
            keep = dep >= lev
            if keep.any():
                sk.update(i, j, delta, mask=keep)

    def update_rows(self, idx, rows) -> None:
        idx, rows = self._rows_block(idx, rows)
        dep = self.depth(idx)
        for lev, sk in enumerate(self.sketches):
            sk.update_rows(idx, rows, mask=dep >= lev)

    def estimate(self, P=None) -> np.ndarray:
        n = self.n
        dep = self.depth(np.arange(n))
        norms = np.stack([sk.query(P)[1] for sk in self.sketches])  # (L, m, n)
        member = np.stack([dep >= lev for lev in range(self.levels)])
        norms = np.where(member, norms, 0.0)
        bound = n * norms[0].max(axis=1)  # (m,)
        n_bands = self.n_bands(n)
        light = self.b0 / 8.0
        total = np.zeros(self.m)
        for c in range(n_bands):
            hi = bound / 2.0 ** c
            lo = hi / 2.0
            in_band = ((norms > lo[None, :, None]) & (norms <= hi[None, :, None])).sum(axis=2)
            heavy = (norms > lo[None, :, None]).sum(axis=2)  # (L, m)
            ok = heavy <= light
            ok[-1] = True
            lev = np.argmax(ok, axis=0)
            count = np.take_along_axis(in_band, lev[None, :], axis=0)[0]
            total += count * 2.0 ** lev * 0.75 * hi
        return total

    def subset(self, idx) -> "EstimatorM":
        out = EstimatorM.__new__(EstimatorM)
        _Sketch.__init__(out, self.n, self.d, self.seeds[idx])
        out.levels, out.r0, out.b0 = self.levels, self.r0, self.b0
        out.sketches = [sk.subset(idx) for sk in self.sketches]
        return out

    def merge(self, other: "EstimatorM") -> "EstimatorM":
        self._check_compatible(other)
        out = self.subset(np.arange(self.m))
        out.sketches = [a.merge(b) for a, b in zip(self.sketches, other.sketches)]
        return out

    def dense(self) -> np.ndarray:
        return np.stack([sk.dense() for sk in self.sketches], axis=1)

    def _load_dense(self, arr: np.ndarray) -> None:
        arr = arr.reshape(self.m, self.levels, self.r0, self.b0, self.d)
        for lev, sk in enumerate(self.sketches):
            sk._load_dense(arr[:, lev])


_KINDS = {cls.kind: cls for cls in (AmsM, CountSketchM, EstimatorM)}


def merge(a, b):
    """Cell-wise sum of two sketches with byte-identical headers."""
    return a.merge(b)


def _header_bytes(sketch) -> bytes:
    return json.dumps(sketch.header(), sort_keys=True, separators=(",", ":")).encode()


def to_bytes(sketch) -> bytes:
    """Versioned header followed by a little-endian float64 dump of every cell."""
    head = _header_bytes(sketch)
    body = np.ascontiguousarray(sketch.dense(), dtype="<f8").tobytes()
    return FORMAT_MAGIC + struct.pack("<HI", FORMAT_VERSION, len(head)) + head + body


def from_bytes(blob: bytes):
    if not blob.startswith(FORMAT_MAGIC):
        raise ValueError("not a sketch dump")
    off = len(FORMAT_MAGIC)
    version, hlen = struct.unpack_from("<HI", blob, off)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported sketch format version {version}")
    off += struct.calcsize("<HI")
    head = json.loads(blob[off:off + hlen])
    off += hlen
    cls = _KINDS[head["kind"]]
    seeds = np.array([int(s, 16) for s in head["seeds"]], dtype=np.uint64)
    p = head["params"]
    if cls is AmsM:
        sk = AmsM(head["n"], head["d"], p["eps"], seeds, p["groups"], p["per_group"])
    elif cls is CountSketchM:
        sk = CountSketchM(head["n"], head["d"], p["rows"], p["buckets"], seeds)
    else:
        sk = EstimatorM(head["n"], head["d"], seeds, p["rows"], p["buckets"], p["levels"])
    arr = np.frombuffer(blob, dtype="<f8", offset=off).astype(np.float64)
    sk._load_dense(arr)
    return sk
