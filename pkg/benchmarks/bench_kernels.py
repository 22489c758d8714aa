#!/usr/bin/env python3
"""Benchmark the compiled kernel lane against the pure-numpy fallback.

Runs each hot kernel on representative inputs and prints a table of
per-call wall times plus the speedup. Usage:

    python benchmarks/bench_kernels.py [--size 256] [--repeats 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from xferkit._kernels import pure

try:
    from xferkit._kernels import _ext
except ImportError:
    _ext = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def bench(size, repeats):
    rng = np.random.default_rng(99)
    dsm = rng.uniform(0, 40, (size, size)).astype(np.float32)
    dsm += (rng.uniform(size=(size, size)) < 0.02) * 15.0
    levels_img = rng.integers(0, 32, (size, size)).astype(np.int16)
    offsets = np.array([(0, 1), (1, 0), (1, 1), (-1, 1)], dtype=np.int64)

    n, d = 40_000, 11
    X = rng.normal(size=(n, d)).astype(np.float32)
    y = rng.integers(0, 4, n).astype(np.uint8)
    idx = rng.integers(0, n, n).astype(np.int64)
    feats = np.arange(4, dtype=np.int64)

    n_nodes = 2047                      # full binary tree of depth 10
    feature = np.full(n_nodes, -1, dtype=np.int32)
    internal = np.arange(n_nodes // 2)
    feature[internal] = (internal % d).astype(np.int32)
    threshold = rng.normal(size=n_nodes)
    left = np.full(n_nodes, -1, dtype=np.int32)
    right = np.full(n_nodes, -1, dtype=np.int32)
    left[internal] = 2 * internal + 1
    right[internal] = 2 * internal + 2

    marker = pure.grey_erode_square(dsm, 31)
    cases = [
        ("erode 31x31", lambda impl: impl.grey_erode_square(dsm, 31)),
        ("reconstruct", lambda impl: impl.reconstruct_dilation(marker, dsm)),
        ("glcm w13 l32", lambda impl: impl.glcm_feature_image(
            levels_img, 13, 32, offsets)),
        ("best_split 40k", lambda impl: impl.best_split(X, y, idx, feats, 20)),
        ("tree_apply 40k", lambda impl: impl.tree_apply(
            feature, threshold, left, right, X)),
    ]

    print(f"input size {size}x{size}, best of {repeats}")
    print(f"{'kernel':<16} {'pure':>10} {'compiled':>10} {'speedup':>9}")
    for name, call in cases:
        t_pure, out_pure = timeit(lambda: call(pure), repeats)
        if _ext is None:
            print(f"{name:<16} {t_pure:>9.3f}s {'n/a':>10} {'n/a':>9}")
            continue
        t_ext, out_ext = timeit(lambda: call(_ext), repeats)
        if isinstance(out_pure, np.ndarray):
            agree = np.allclose(out_pure, out_ext, atol=1e-9)
        else:
            agree = out_pure == out_ext
        flag = "" if agree else "  RESULTS DIFFER"
        print(f"{name:<16} {t_pure:>9.3f}s {t_ext:>9.3f}s {t_pure / t_ext:>8.1f}x{flag}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if _ext is None:
        print("compiled extension not available; timing the pure lane only")
    bench(args.size, args.repeats)


if __name__ == "__main__":
    main()
