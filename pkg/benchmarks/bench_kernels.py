"""Benchmark the numba kernels against the pure-numpy fallbacks.

Runs the three hot kernels (nearest-neighbor search, farthest point
sampling, z-buffer splatting) on training-scale inputs under every
available backend, checks that the outputs agree exactly, and prints a
timing table with speedups.

    python benchmarks/bench_kernels.py [--repeats 5] [--d-pc 1000]

Select backends with ASSEMBLY_BACKEND (auto | numba | numpy); under
"numpy" the numba implementations are not built, so only the fallback is
timed.
"""

import argparse
import sys
import time

import numpy as np

from partassembly import kernels


def time_call(fn, *args, repeats=5):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(repeats, d_pc, m):
    rng = np.random.default_rng(0)
    cloud_a = rng.normal(size=(d_pc, 3))
    cloud_b = rng.normal(size=(d_pc, 3))
    raw = rng.normal(size=(4 * d_pc, 3))
    splat_points = rng.uniform(-0.7, 0.7, size=(20 * d_pc, 3))
    splat_ids = rng.integers(0, 20, size=20 * d_pc).astype(np.int64)

    cases = [
        (f"nearest_sq {d_pc}x{d_pc}", "nearest_sq", (cloud_a, cloud_b)),
        (f"fps {4 * d_pc}->{d_pc}", "fps", (raw, d_pc, 0)),
        (f"zbuffer {20 * d_pc} pts, m={m}", "zbuffer", (splat_points, splat_ids, m, 0.75)),
    ]

    names = sorted(kernels.IMPLEMENTATIONS)
    if "numba" in names:
        # warm the jit cache outside the timed region
        nb = kernels.IMPLEMENTATIONS["numba"]
        nb.nearest_sq(cloud_a[:4], cloud_b[:4])
        nb.fps(raw[:8], 4, 0)
        nb.zbuffer(splat_points[:8], splat_ids[:8], m, 0.75)

    header = f"{'kernel':<28}" + "".join(f"{n:>12}" for n in names)
    if len(names) > 1:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    agree = True
    for label, attr, args in cases:
        times = {}
        outputs = {}
        for name in names:
            fn = getattr(kernels.IMPLEMENTATIONS[name], attr)
            times[name], outputs[name] = time_call(fn, *args, repeats=repeats)
        row = f"{label:<28}" + "".join(f"{times[n] * 1e3:>10.2f}ms" for n in names)
        if len(names) > 1:
            row += f"{times['numpy'] / times['numba']:>9.1f}x"
            ref = outputs[names[0]]
            for name in names[1:]:
                got = outputs[name]
                pair_ok = all(np.array_equal(a, b) for a, b in zip(ref, got)) \
                    if isinstance(ref, tuple) else np.array_equal(ref, got)
                if not pair_ok:
                    agree = False
                    row += "  MISMATCH"
        print(row)
    print(f"\nactive backend: {kernels.active_backend()}")
    if len(names) > 1:
        print("outputs agree across backends" if agree
              else "BACKEND OUTPUTS DISAGREE")
    return agree


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--d-pc", type=int, default=1000)
    parser.add_argument("--m", type=int, default=32)
    args = parser.parse_args(argv)
    return 0 if bench(args.repeats, args.d_pc, args.m) else 1


if __name__ == "__main__":
    sys.exit(main())
