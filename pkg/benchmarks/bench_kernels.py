#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure numpy fallbacks.

Runs each kernel on a realistic spectral-region crop (a rendered synthetic
study) plus the end-to-end segmentation, and prints numpy vs numba timings.
Run once with the default backend and, to see the fallback path end to end,
again with MIDOPPLER_DISABLE_NUMBA=1.
"""

import argparse
import time

import numpy as np

from midoppler import kernels
from midoppler.segmentation import SegmentationParams, segment_envelope_threshold
from midoppler.synth import SynthParams, generate_synthetic


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--noise", type=float, default=0.15)
    args = parser.parse_args()

    image, manifest, _ = generate_synthetic(SynthParams(seed=0, noise_sigma=args.noise))
    x0, y0, x1, y1 = manifest.spectral_region
    region = image.pixels[y0:y1 + 1, x0:x1 + 1]
    gray = np.ascontiguousarray(
        region.astype(np.float32) @ np.array([0.299, 0.587, 0.114], np.float32)
    )
    mask = gray > 100.0

    print(f"active backend: {kernels.active_backend()}")
    print(f"region: {gray.shape[1]}x{gray.shape[0]} px, best of {args.repeats}\n")

    cases = [
        ("column_median(window=3)",
         lambda: kernels.column_median_numpy(gray, 3),
         lambda: kernels.column_median(gray, 3)),
        ("vertical_opening(radius=1)",
         lambda: kernels.vertical_opening_numpy(mask, 1),
         lambda: kernels.vertical_opening(mask, 1)),
        ("remove_small_components(25)",
         lambda: kernels.remove_small_components_numpy(mask, 25),
         lambda: kernels.remove_small_components(mask, 25)),
        ("segment_envelope_threshold",
         None,
         lambda: segment_envelope_threshold(image, manifest, SegmentationParams())),
    ]

    header = f"{'kernel':<30} {'numpy':>10} {'dispatch':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, numpy_fn, dispatch_fn in cases:
        dispatch_fn()  # warm-up (jit compile on first call)
        t_dispatch = best_of(dispatch_fn, args.repeats)
        if numpy_fn is None:
            print(f"{name:<30} {'-':>10} {t_dispatch * 1e3:>8.2f}ms {'-':>8}")
            continue
        t_numpy = best_of(numpy_fn, args.repeats)
        speedup = t_numpy / t_dispatch if t_dispatch > 0 else float("inf")
        print(
            f"{name:<30} {t_numpy * 1e3:>8.2f}ms {t_dispatch * 1e3:>8.2f}ms "
            f"{speedup:>7.1f}x"
        )


if __name__ == "__main__":
    main()
