"""Benchmark the compiled mask kernels against their pure-Python twins.

Run: ``python benchmarks/bench_kernels.py [--masks N] [--radius R]``

Measures the three kernel entry points in isolation and the full per-mask
spatial feature path (trace + hull + RDP + moments) end to end.
"""
import argparse
import time

import numpy as np

from playclass import rle
from playclass.dataset_io import TrackedMask
from playclass.kernels import _native, pure
from playclass.mask_features import frame_spatial_features


def make_masks(n, radius, seed=0):
    rng = np.random.default_rng(seed)
    masks = []
    size = 4 * radius
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(n):
        cy, cx = rng.integers(radius + 2, size - radius - 2, 2)
        r = radius + int(rng.integers(-2, 3))
        m = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        # random bite out of the disc so contours stay non-trivial
        by, bx = rng.integers(0, size, 2)
        m &= (yy - by) ** 2 + (xx - bx) ** 2 > (radius // 2) ** 2
        if m.any():
            masks.append(m)
    return masks


def bench(label, fn, args_list, repeats=1):
    t0 = time.perf_counter()
    for _ in range(repeats):
        for args in args_list:
            fn(*args)
    dt = time.perf_counter() - t0
    per = dt / (len(args_list) * repeats) * 1e6
    print(f"  {label:<28} {dt:8.3f}s total  {per:9.1f} us/call")
    return dt


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--masks", type=int, default=2000)
    parser.add_argument("--radius", type=int, default=12)
    args = parser.parse_args()

    masks = make_masks(args.masks, args.radius)
    print(f"{len(masks)} masks, radius ~{args.radius}")

    impls = [("pure", pure)] + ([("native", _native)] if _native is not None else [])
    if _native is None:
        print("compiled extension not built; benchmarking the pure path only")

    trace_args = [(m,) for m in masks]
    rng = np.random.default_rng(1)
    hull_inputs = []
    for m in masks:
        loops = pure.trace_crack_loops(m)
        pts = np.vstack(loops).astype(float)
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        p = pts[order]
        keep = np.ones(len(p), bool)
        keep[1:] = np.any(p[1:] != p[:-1], axis=1)
        hull_inputs.append((p[keep],))
    rdp_inputs = [(rng.random((rng.integers(20, 200), 2)).cumsum(axis=0), 1.0)
                  for _ in masks]

    totals = {}
    for name, impl in impls:
        print(f"\n[{name}]")
        t = bench("trace_crack_loops", impl.trace_crack_loops, trace_args)
        t += bench("convex_hull_sorted", impl.convex_hull_sorted, hull_inputs)
        t += bench("rdp_keep", impl.rdp_keep, rdp_inputs)
        totals[name] = t

    if len(totals) == 2:
        print(f"\nkernel speedup native vs pure: {totals['pure'] / totals['native']:.1f}x")

    # end-to-end spatial feature path under each selection
    records = []
    for i, m in enumerate(masks):
        counts = rle.encode_mask(m)
        bbox = rle.tight_bbox(counts, m.shape)
        records.append(TrackedMask("bench", i, 1, bbox, m.shape, counts, 0.9))

    import playclass.kernels as K

    results = {}
    for name, impl in impls:
        K.trace_crack_loops = impl.trace_crack_loops
        K.convex_hull_sorted = impl.convex_hull_sorted
        K.rdp_keep = impl.rdp_keep
        t0 = time.perf_counter()
        for rec in records:
            frame_spatial_features(rec)
        results[name] = time.perf_counter() - t0
        print(f"\nspatial features end-to-end [{name}]: {results[name]:.3f}s "
              f"({results[name] / len(records) * 1e6:.0f} us/mask)")
    if len(results) == 2:
        print(f"feature-path speedup native vs pure: {results['pure'] / results['native']:.1f}x")


if __name__ == "__main__":
    main()
