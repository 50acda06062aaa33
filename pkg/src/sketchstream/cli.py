"""Command-line driver.

Exit codes: 0 success, 1 usage or input error, 2 sampler FAIL, 3 at least one
acceptance criterion failed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .apps import (
    projective_cluster_reduce,
    row_subset_select,
    subspace_approx,
    volume_max_turnstile,
)
from .oracle import SizeGuardError, best_rank_k_error, exact_volume_max
from .randomness import parse_seed
from .rowarrival import volume_max_row_arrival
from .samplers import SamplerConfig, multi_sample
from .sketches import AmsM, CountSketchM, EstimatorM, SketchMismatch, from_bytes, merge, to_bytes
from .streams import StreamParseError, read_matrix, read_stream

EXIT_OK, EXIT_USAGE, EXIT_FAIL, EXIT_REJECT = 0, 1, 2, 3
APPS = ("rss", "subspace", "cluster", "volmax", "volmax-ra")
ZERO_REL = 1e-9


class UsageError(Exception):
    pass


def _positive(kind):
    def conv(text: str):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return conv


def _seed(text: str) -> int:
    try:
        return parse_seed(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _num(x: float) -> str:
    return repr(float(x) + 0.0)


def _snap(x: float, scale: float) -> float:
    return 0.0 if abs(x) <= ZERO_REL * max(scale, 1e-300) else float(x)


def _apply_threads() -> None:
    raw = os.environ.get("SKETCHSTREAM_THREADS")
    if not raw:
        return
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"SKETCHSTREAM_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"SKETCHSTREAM_THREADS must be a positive integer, got {raw!r}")
    import numba

    numba.set_num_threads(min(value, numba.config.NUMBA_NUM_THREADS))


def _emit(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _sampler_config(args, p: int | None = None) -> SamplerConfig:
    return SamplerConfig(p=p or args.p, eps=args.eps, buckets=args.buckets, fixed_reps=args.reps)


# sample --------------------------------------------------------------------

def cmd_sample(args) -> int:
    stream = read_stream(args.stream)
    P = None
    if args.projector:
        P = read_matrix(args.projector)
        if P.shape != (stream.d, stream.d):
            raise UsageError(f"projector must be {stream.d} x {stream.d}, got {P.shape}")
    config = _sampler_config(args)
    kw = dict(P=P, config=config, delta=args.delta, ingest=args.ingest or "stream")
    if stream.kind == "turnstile":
        out = multi_sample(args.seed, updates=stream.updates, shape=(stream.n, stream.d), **kw)
    else:
        out = multi_sample(args.seed, A=stream.rows, **kw)
    lines = [f"status {out.status}", f"seed {args.seed}", f"p {config.p}", f"eps {_num(config.eps)}"]
    if out.ok:
        lines += [f"index {out.index}", f"scale {_num(out.scale)}",
                  "noisy_row " + " ".join(_num(x) for x in out.noisy_row)]
    _emit(lines, args.out)
    return EXIT_OK if out.ok else EXIT_FAIL


# run -----------------------------------------------------------------------

def _baseline(app: str, A: np.ndarray, k: int, p: int, s: int):
    """Oracle reference value and a note, or (None, reason)."""
    if app == "rss":
        return best_rank_k_error(A, k, 2) ** 2, "svd"
    if app == "subspace":
        return best_rank_k_error(A, k, p) ** p, "svd" if p == 2 else "svd-reference-not-optimum"
    if app == "cluster":
        return None, "unavailable"
    try:
        return exact_volume_max(A, k)[1], "enumeration"
    except (SizeGuardError, ValueError) as exc:
        return None, f"unavailable ({exc})"


def _ratio(app: str, cost: float, base: float | None) -> str:
    if base is None:
        return "n/a"
    if app in ("volmax", "volmax-ra"):
        if cost == 0:
            return "0/0" if base == 0 else "inf"
        return _num(base / cost)
    if base == 0:
        return "0/0" if cost == 0 else "inf"
    return _num(cost / base)


def cmd_run(args) -> int:
    stream = read_stream(args.stream)
    A = stream.matrix()
    k, p = args.k, args.p
    if k > min(A.shape) and args.app in ("volmax", "volmax-ra"):
        raise UsageError(f"k={k} exceeds min(n, d)={min(A.shape)}")
    common = dict(seed=args.seed, ingest=args.ingest or "replay")
    scale = float(np.sum(A * A))
    if args.app == "rss":
        res = row_subset_select(stream, k, eps=args.eps, config=_sampler_config(args, 2),
                                delta=args.delta, **common)
    elif args.app == "subspace":
        res = subspace_approx(stream, k, p=p, eps=args.eps, config=_sampler_config(args),
                              delta=args.delta, **common)
        scale = float(np.sum(np.linalg.norm(A, axis=1) ** p))
    elif args.app == "cluster":
        res = projective_cluster_reduce(stream, k, args.s, p=p, eps=args.eps,
                                        shrink=args.shrink, delta=args.delta, **common)
        scale = float(np.sum(np.linalg.norm(A, axis=1) ** p))
    elif args.app == "volmax":
        res = volume_max_turnstile(stream, k, alpha=args.alpha, buckets=args.buckets,
                                   reps=args.reps, **common)
        scale = float(np.prod(np.sort(np.linalg.norm(A, axis=1))[::-1][:k]))
    else:
        if stream.kind != "rows":
            raise UsageError("volmax-ra reads a row-arrival ('rows n d') stream")
        res = volume_max_row_arrival(A, k, mode=args.mode, seed=args.seed)
        scale = float(np.prod(np.sort(np.linalg.norm(A, axis=1))[::-1][:k]))
    base, note = _baseline(args.app, A, k, p, args.s)
    cost = _snap(res.cost, scale)
    if base is not None:
        base = _snap(base, scale)
    lines = [f"app {args.app}", f"objective {res.objective}", f"seed {args.seed}",
             f"cost {_num(cost)}",
             f"baseline {_num(base) if base is not None else 'n/a'} {note}",
             f"ratio {_ratio(args.app, cost, base)}",
             "indices " + " ".join(str(int(i)) for i in res.indices)]
    for key in sorted(res.extra):
        val = res.extra[key]
        if isinstance(val, (int, float, str, np.integer, np.floating)):
            lines.append(f"{key} {_num(val) if isinstance(val, (float, np.floating)) else val}")
    _emit(lines, args.out)
    return EXIT_OK


# accept --------------------------------------------------------------------

def cmd_accept(args) -> int:
    names = list(acceptance.CRITERIA) + ["all"]
    if args.suite not in names:
        raise UsageError(f"unknown suite {args.suite!r}; available: {', '.join(names)}")
    results = acceptance.run_suite(args.suite, seed=args.seed, trials=args.trials)
    lines = []
    for res in results:
        lines.append(res.line())
        lines += [f"    {d}" for d in res.details]
    passed = sum(r.passed for r in results)
    lines.append(f"summary {passed}/{len(results)} passed")
    _emit(lines, args.out)
    return EXIT_OK if passed == len(results) else EXIT_REJECT


# sketch --------------------------------------------------------------------

def cmd_sketch_build(args) -> int:
    stream = read_stream(args.stream)
    n, d = stream.n, stream.d
    if args.kind == "ams":
        sk = AmsM(n, d, args.eps, args.seed)
    elif args.kind == "countsketch":
        sk = CountSketchM(n, d, args.rows, args.buckets or 64, args.seed)
    else:
        sk = EstimatorM(n, d, args.seed, args.rows, args.buckets or 64)
    if stream.kind == "turnstile":
        for i, j, delta in stream.updates:
            sk.update(i, j, delta)
    else:
        sk.update_rows(np.arange(n), stream.rows)
    Path(args.out).write_bytes(to_bytes(sk))
    return EXIT_OK


def _load(path: str):
    try:
        return from_bytes(Path(path).read_bytes())
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_sketch_merge(args) -> int:
    out = _load(args.inputs[0])
    for path in args.inputs[1:]:
        out = merge(out, _load(path))
    Path(args.out).write_bytes(to_bytes(out))
    return EXIT_OK


def cmd_sketch_info(args) -> int:
    sk = _load(args.path)
    head = sk.header()
    lines = [f"kind {head['kind']}", f"n {head['n']}", f"d {head['d']}",
             "seeds " + " ".join(head["seeds"])]
    lines += [f"{k} {v}" for k, v in sorted(head["params"].items())]
    if isinstance(sk, AmsM):
        lines.append("estimate " + " ".join(_num(x) for x in sk.estimate()))
    elif isinstance(sk, EstimatorM):
        lines.append("estimate " + " ".join(_num(x) for x in sk.estimate()))
    else:
        idx, _, norms = sk.top_rows(None, min(args.top, sk.n))
        lines.append("top " + " ".join(f"{i}:{_num(v)}" for i, v in zip(idx[0], norms[0])))
    _emit(lines, args.out)
    return EXIT_OK


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=0, help="decimal or 0x-hex 64-bit seed")
    common.add_argument("--out", help="write the report here instead of stdout")

    samp = argparse.ArgumentParser(add_help=False)
    samp.add_argument("--eps", type=_positive(float), default=0.1)
    samp.add_argument("--p", type=int, choices=(1, 2), default=2)
    samp.add_argument("--delta", type=_positive(float), default=0.01)
    samp.add_argument("--buckets", type=_positive(int))
    samp.add_argument("--reps", type=_positive(int), help="fixed number of sampler instances")
    samp.add_argument("--ingest", choices=("stream", "replay"), default=None,
                      help="stream: explicit sketches; replay: evaluated from the final "
                           "matrix (same outcomes); default stream for sample, replay for run")

    parser = argparse.ArgumentParser(prog="sketchstream",
                                     description="Linear-sketch samplers over matrix streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sample", parents=[common, samp], help="draw one L_{p,2} row sample")
    sp.add_argument("stream")
    sp.add_argument("--projector", help="d x d matrix applied after the stream")
    sp.set_defaults(func=cmd_sample)

    rp = sub.add_parser("run", parents=[common, samp], help="run an application")
    rp.add_argument("app", choices=APPS)
    rp.add_argument("stream")
    rp.add_argument("--k", type=_positive(int), default=2)
    rp.add_argument("--s", type=_positive(int), default=2, help="number of flats (cluster)")
    rp.add_argument("--alpha", type=float, default=2.0)
    rp.add_argument("--shrink", type=_positive(float), default=1 / 8)
    rp.add_argument("--mode", choices=("coreset", "exp_d", "jl_then_exp_d"), default="coreset")
    rp.set_defaults(func=cmd_run)

    ap = sub.add_parser("accept", parents=[common], help="run acceptance criteria")
    ap.add_argument("suite", nargs="?", default="all")
    ap.add_argument("--trials", type=_positive(int))
    ap.set_defaults(func=cmd_accept)

    sk = sub.add_parser("sketch", help="build, merge and inspect serialized sketches")
    sks = sk.add_subparsers(dest="sketch_command", required=True)
    b = sks.add_parser("build", parents=[common])
    b.add_argument("stream")
    b.add_argument("--kind", choices=("ams", "countsketch", "estimator"), default="countsketch")
    b.add_argument("--eps", type=_positive(float), default=0.2)
    b.add_argument("--rows", type=_positive(int), default=7)
    b.add_argument("--buckets", type=_positive(int))
    b.set_defaults(func=cmd_sketch_build, out_required=True)
    m = sks.add_parser("merge", parents=[common])
    m.add_argument("inputs", nargs="+")
    m.set_defaults(func=cmd_sketch_merge, out_required=True)
    i = sks.add_parser("info", parents=[common])
    i.add_argument("path")
    i.add_argument("--top", type=_positive(int), default=5)
    i.set_defaults(func=cmd_sketch_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if getattr(args, "out_required", False) and not args.out:
            raise UsageError("--out is required")
        _apply_threads()
        return args.func(args)
    except (UsageError, StreamParseError, SketchMismatch, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
