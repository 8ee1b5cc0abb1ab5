"""Compare the compiled imaging kernels against the pure-python fallback.

Runs each hot kernel on the same seeded random image with both backends and
prints median wall times plus the speedup. Also asserts the outputs match,
since a fast kernel that disagrees with the reference is worthless.

Usage:
    python3 benchmarks/bench_kernels.py [--size 512] [--repeats 5]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from inspecta.imaging import _kernels_py

try:
    from inspecta.imaging import _kernels as _compiled
except ImportError:
    _compiled = None


def time_op(fn, repeats: int) -> float:
    """Median wall time in milliseconds over the given number of runs."""
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    return statistics.median(samples)


def build_cases(image: np.ndarray, mask: np.ndarray, median_kernel: int):
    def morphology(mod):
        opened = mod.binary_open3(mask)
        closed = mod.binary_close3(opened)
        return mod.largest_component_bbox(closed)

    return [
        ("median_blur k=%d" % median_kernel,
         lambda mod: mod.median_blur_u8(image, median_kernel)),
        ("clahe 8x8", lambda mod: mod.clahe_u8(image, 2.0, 8, 8)),
        ("canny 50/150", lambda mod: mod.canny_u8(image, 50.0, 150.0)),
        ("morphology+bbox", morphology),
    ]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=512, help="square image side")
    parser.add_argument("--repeats", type=int, default=5, help="runs per timing")
    parser.add_argument("--median-kernel", type=int, default=31)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    image = rng.integers(0, 256, size=(args.size, args.size), dtype=np.uint8)
    mask = (image > 128).astype(np.uint8)

    print(f"image {args.size}x{args.size}, repeats {args.repeats}, seed {args.seed}")
    if _compiled is None:
        print("compiled kernels unavailable; timing the python backend only\n")
    else:
        print()

    header = f"{'kernel':<20} {'python ms':>12} {'compiled ms':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))

    for name, case in build_cases(image, mask, args.median_kernel):
        py_ms = time_op(lambda: case(_kernels_py), args.repeats)
        if _compiled is None:
            print(f"{name:<20} {py_ms:>12.2f} {'n/a':>12} {'n/a':>9}")
            continue
        c_ms = time_op(lambda: case(_compiled), args.repeats)
        ref = case(_kernels_py)
        got = case(_compiled)
        if isinstance(ref, np.ndarray):
            matches = np.array_equal(ref, got)
        else:
            matches = ref == got
        suffix = "" if matches else "  MISMATCH"
        print(f"{name:<20} {py_ms:>12.2f} {c_ms:>12.2f} {py_ms / c_ms:>8.1f}x{suffix}")

    return 0


if __name__ == "__main__":
    raise SystemExit(main())
