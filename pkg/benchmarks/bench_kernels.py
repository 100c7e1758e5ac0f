"""Benchmark the compiled kernels against the pure-Python fallback.

Usage:  python benchmarks/bench_kernels.py [--points 20000] [--dim 64]
        [--k 256] [--lcs-len 200] [--lcs-pairs 200] [--repeats 3]

Reports wall time per implementation and the speedup, and verifies both
paths return the same selections / LCS lengths on the benchmark inputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from synthdial._kernels import _pykernels

try:
    from synthdial._kernels import _ckernels
except ImportError:
    _ckernels = None


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def bench_kcenter(args) -> list[tuple[str, float]]:
    rng = np.random.default_rng(0)
    points = np.ascontiguousarray(rng.standard_normal((args.points, args.dim)))
    rows = []
    baseline = None

    impls = [("python (numpy)", _pykernels)]
    if _ckernels is not None:
        impls.append(("compiled", _ckernels))
    for name, mod in impls:
        sel, _ = mod.kcenter_greedy(points, args.k, 0)
        if baseline is None:
            baseline = list(sel)
        elif list(sel) != baseline:
            raise AssertionError(f"{name} selected a different subset")
        rows.append((name, time_call(lambda m=mod: m.kcenter_greedy(points, args.k, 0), args.repeats)))
    return rows


def bench_lcs(args) -> list[tuple[str, float]]:
    rng = np.random.default_rng(1)
    pairs = [
        (
            rng.integers(0, 50, size=args.lcs_len).astype(np.int64),
            rng.integers(0, 50, size=args.lcs_len).astype(np.int64),
        )
        for _ in range(args.lcs_pairs)
    ]
    rows = []
    baseline = None

    impls = [("python", _pykernels)]
    if _ckernels is not None:
        impls.append(("compiled", _ckernels))
    for name, mod in impls:
        values = [mod.lcs_length(a, b) for a, b in pairs]
        if baseline is None:
            baseline = values
        elif values != baseline:
            raise AssertionError(f"{name} computed different LCS lengths")
        rows.append(
            (name, time_call(lambda m=mod: [m.lcs_length(a, b) for a, b in pairs], args.repeats))
        )
    return rows


def report(title: str, rows: list[tuple[str, float]]) -> None:
    print(f"\n{title}")
    slowest = max(t for _, t in rows)
    for name, t in rows:
        print(f"  {name:<16} {t * 1000:10.1f} ms   ({slowest / t:5.1f}x vs slowest)")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=20_000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--k", type=int, default=256)
    parser.add_argument("--lcs-len", type=int, default=200)
    parser.add_argument("--lcs-pairs", type=int, default=200)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if _ckernels is None:
        print("compiled kernels not built; benchmarking the fallback only")

    report(
        f"k-center greedy  (n={args.points}, dim={args.dim}, k={args.k})",
        bench_kcenter(args),
    )
    report(
        f"LCS length  ({args.lcs_pairs} pairs of length {args.lcs_len})",
        bench_lcs(args),
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
