"""Turnstile and row-arrival streams: in-memory form and the text file format.

File format: a header line ``turnstile n d`` followed by ``i j delta`` lines
(0-based indices, integer delta), or ``rows n d`` followed by exactly ``n``
lines of ``d`` decimals.  Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np


class TurnstileUpdate(NamedTuple):
    i: int
    j: int
    delta: float


class StreamParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class Stream:
    kind: str  # "turnstile" or "rows"
    n: int
    d: int
    updates: list[TurnstileUpdate] | None = None
    rows: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        if self.kind == "rows":
            return self.rows
        return updates_to_matrix(self.updates, self.n, self.d)


def updates_to_matrix(updates: Iterable, n: int, d: int) -> np.ndarray:
    A = np.zeros((n, d))
    for i, j, delta in updates:
        if not (0 <= i < n and 0 <= j < d):
            raise IndexError(f"update ({i}, {j}) outside a {n} x {d} matrix")
        A[i, j] += delta
    return A


def matrix_to_updates(A, seed: int | None = None, splits: int = 1) -> list[TurnstileUpdate]:
    """Updates summing to ``A``: each nonzero entry cut into ``splits`` pieces.

    With a seed, integer entries get random integer pieces (some of opposite
    sign) and the whole list is shuffled, which exercises cancellations.
    """
    A = np.asarray(A, dtype=np.float64)
    out = []
    rng = None if seed is None else np.random.default_rng(seed)
    for (i, j), v in np.ndenumerate(A):
        if v == 0 and rng is None:
            continue
        if rng is None or splits <= 1:
            out.append(TurnstileUpdate(int(i), int(j), float(v)))
            continue
        pieces = rng.integers(-8, 9, size=splits - 1).astype(np.float64)
        pieces = np.append(pieces, v - pieces.sum())
        out.extend(TurnstileUpdate(int(i), int(j), float(x)) for x in pieces if x != 0)
    if rng is not None:
        order = rng.permutation(len(out))
        out = [out[k] for k in order]
    return out


def _parse_header(line: str, lineno: int):
    parts = line.split()
    if len(parts) != 3 or parts[0] not in ("turnstile", "rows"):
        raise StreamParseError(lineno, f"expected 'turnstile n d' or 'rows n d', got {line!r}")
    try:
        n, d = int(parts[1]), int(parts[2])
    except ValueError:
        raise StreamParseError(lineno, f"non-integer dimensions in {line!r}") from None
    if n < 1 or d < 1:
        raise StreamParseError(lineno, "dimensions must be positive")
    return parts[0], n, d


def parse_stream(lines: Iterable[str]) -> Stream:
    header = None
    updates: list[TurnstileUpdate] = []
    rows: list[list[float]] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            header = _parse_header(line, lineno)
            continue
        kind, n, d = header
        parts = line.split()
        if kind == "turnstile":
            if len(parts) != 3:
                raise StreamParseError(lineno, f"expected 'i j delta', got {line!r}")
            try:
                i, j, delta = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise StreamParseError(lineno, f"expected integers, got {line!r}") from None
            if not (0 <= i < n and 0 <= j < d):
                raise StreamParseError(lineno, f"index ({i}, {j}) outside {n} x {d}")
            updates.append(TurnstileUpdate(i, j, float(delta)))
        else:
            if len(parts) != d:
                raise StreamParseError(lineno, f"expected {d} values, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise StreamParseError(lineno, f"non-numeric row {line!r}") from None
            if not np.all(np.isfinite(vals)):
                raise StreamParseError(lineno, "non-finite value")
            if len(rows) >= n:
                raise StreamParseError(lineno, f"more than {n} rows")
            rows.append(vals)
    if header is None:
        raise StreamParseError(0, "empty stream file")
    kind, n, d = header
    if kind == "rows":
        if len(rows) != n:
            raise StreamParseError(0, f"header promises {n} rows, found {len(rows)}")
        return Stream(kind, n, d, rows=np.array(rows, dtype=np.float64).reshape(n, d))
    return Stream(kind, n, d, updates=updates)


def read_stream(path) -> Stream:
    with open(path, encoding="utf-8") as fh:
        return parse_stream(fh)


def format_turnstile(n: int, d: int, updates: Iterable) -> str:
    lines = [f"turnstile {n} {d}"]
    for i, j, delta in updates:
        if delta != int(delta):
            raise ValueError("turnstile files carry integer deltas only")
        lines.append(f"{i} {j} {int(delta)}")
    return "\n".join(lines) + "\n"


def format_rows(A) -> str:
    A = np.asarray(A, dtype=np.float64)
    lines = [f"rows {A.shape[0]} {A.shape[1]}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in A]
    return "\n".join(lines) + "\n"


def write_stream(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def read_matrix(path) -> np.ndarray:
    """A whitespace-separated dense matrix (used for projector files)."""
    try:
        M = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise StreamParseError(0, f"bad matrix file: {exc}") from None
    return M
