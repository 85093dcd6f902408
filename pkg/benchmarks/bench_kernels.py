#!/usr/bin/env python3
"""Benchmark the numba-jitted kernels against the pure-numpy fallback.

Both implementations are always importable from coalign.kernels, so this
script times them side by side regardless of which backend the package
selected at import. Run:

    python benchmarks/bench_kernels.py --rows 512 --cols 16 --repeats 200
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from coalign import kernels


def time_fn(fn, *args, repeats):
    fn(*args)  # warmup (and JIT compile for the numba variants)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=512, help="batch rows")
    parser.add_argument("--cols", type=int, default=16, help="classes / feature width")
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if kernels.active_backend() != "numba":
        print("note: numba unavailable or disabled; timing the numpy path against itself")

    rng = np.random.default_rng(0)
    logits = rng.normal(size=(args.rows, args.cols))
    probs = kernels._np_softmax(logits)
    labels = rng.integers(0, args.cols, args.rows)
    weights = (rng.random(args.rows) > 0.3).astype(np.float64)
    x = rng.normal(size=(args.rows, args.cols))
    g = rng.normal(size=(args.rows, args.cols))
    y, norms = kernels._np_normalize_rows(x, 1e-12)
    value = rng.normal(size=(args.rows, args.cols))
    grad = rng.normal(size=(args.rows, args.cols))
    buf = np.zeros_like(value)

    cases = [
        ("softmax", kernels._np_softmax, (logits,)),
        ("cross_entropy", kernels._np_xent, (probs, labels, weights)),
        ("entropy", kernels._np_entropy, (probs,)),
        ("normalize_rows", kernels._np_normalize_rows, (x, 1e-12)),
        ("normalize_bwd", kernels._np_normalize_rows_bwd, (g, y, norms, 1e-12)),
        ("sgd_update", kernels._np_sgd_update, (value, grad, buf, 0.01, 0.9)),
    ]

    print(f"{args.rows} x {args.cols}, {args.repeats} repeats")
    print(f"{'kernel':16s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name, np_fn, fn_args in cases:
        t_np = time_fn(np_fn, *fn_args, repeats=args.repeats)
        nb_fn = getattr(kernels, "_nb_" + np_fn.__name__[4:], None)
        if nb_fn is None:
            print(f"{name:16s} {t_np * 1e6:10.2f}us {'-':>12s} {'-':>9s}")
            continue
        t_nb = time_fn(nb_fn, *fn_args, repeats=args.repeats)
        print(f"{name:16s} {t_np * 1e6:10.2f}us {t_nb * 1e6:10.2f}us {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
