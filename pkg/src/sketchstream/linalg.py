"""Small dense linear algebra: orthonormal bases, residuals and volumes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_RANK_TOL = 1e-10


def _vec(v, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a row vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: {v.shape[0]} != {dim}")
    return v


@dataclass(frozen=True)
class OrthoBasis:
    """Ordered orthonormal rows spanning a subspace of R^dim."""

    dim: int
    vectors: np.ndarray = field(default=None)
    rank_tol: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dimension must be positive")
        vecs = self.vectors
        if vecs is None:
            vecs = np.zeros((0, self.dim))
        vecs = np.asarray(vecs, dtype=np.float64).reshape(-1, self.dim)
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)

    @classmethod
    def empty(cls, dim: int, rank_tol: float = DEFAULT_RANK_TOL) -> "OrthoBasis":
        return cls(dim, None, rank_tol)

    @classmethod
    def from_rows(cls, rows, dim: int | None = None,
                  rank_tol: float = DEFAULT_RANK_TOL) -> "OrthoBasis":
        rows = np.asarray(rows, dtype=np.float64)
        if dim is None:
            dim = rows.shape[-1]
        basis = cls.empty(dim, rank_tol)
        for row in rows.reshape(-1, dim):
            basis = orthonormal_extend(basis, row)
        return basis

    @property
    def rank(self) -> int:
        return self.vectors.shape[0]

    def projector(self) -> np.ndarray:
        """Explicit d x d matrix of the projection onto the orthogonal complement."""
        q = self.vectors
        return np.eye(self.dim) - q.T @ q


def residual(basis: OrthoBasis, v) -> np.ndarray:
    """Component of ``v`` orthogonal to ``span(basis)`` (two MGS sweeps)."""
    r = _vec(v, basis.dim).copy()
    for _ in range(2):
        for q in basis.vectors:
            r -= (q @ r) * q
    return r


def orthonormal_extend(basis: OrthoBasis, v) -> OrthoBasis:
    v = _vec(v, basis.dim)
    r = residual(basis, v)
    rn = np.linalg.norm(r)
    vn = np.linalg.norm(v)
    if vn == 0.0 or rn <= basis.rank_tol * vn or basis.rank == basis.dim:
        return basis
    vecs = np.vstack([basis.vectors, r / rn])
    return OrthoBasis(basis.dim, vecs, basis.rank_tol)


def parallelepiped_volume(rows) -> float:
    """sqrt(det(R R^T)) as the product of Gram-Schmidt residual norms."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    k, d = rows.shape
    if k > d:
        raise ValueError(f"{k} rows cannot span a parallelepiped in R^{d}")
    if k == 0:
        return 1.0
    scale = float(np.max(np.linalg.norm(rows, axis=1)))
    if scale == 0.0:
        return 0.0
    q = np.zeros((0, d))
    vol = 1.0
    for row in rows:
        r = row.copy()
        for _ in range(2):
            for u in q:
                r -= (u @ r) * u
        rn = np.linalg.norm(r)
        if rn <= DEFAULT_RANK_TOL * scale:
            return 0.0
        vol *= rn
        q = np.vstack([q, r / rn])
    return float(vol)


def lpq_norm(m, p: int) -> float:
    """L_{p,2} norm: p=2 is the Frobenius norm, p=1 sums the row norms."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0.0
    rn = np.linalg.norm(m.reshape(m.shape[0], -1), axis=1)
    if p == 1:
        return float(rn.sum())
    if p == 2:
        return float(np.sqrt(np.sum(rn ** 2)))
    raise ValueError(f"p must be 1 or 2, got {p}")


def row_distances(a, basis: OrthoBasis) -> np.ndarray:
    """Distance of every row of ``a`` to ``span(basis)``."""
    a = np.asarray(a, dtype=np.float64)
    q = basis.vectors
    res = a - (a @ q.T) @ q
    res = res - (res @ q.T) @ q
    return np.linalg.norm(res, axis=1)


def subspace_cost(a, basis: OrthoBasis, p: int) -> float:
    """sum_i d(A_i, span)^p, the un-rooted subspace approximation objective."""
    return float(np.sum(row_distances(a, basis) ** p))
