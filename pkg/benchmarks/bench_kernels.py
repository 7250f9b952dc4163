"""Time the compiled kernels against the numpy fallback.

Sizes mirror one full-scale inference window: a class-score volume on a
32x32 patch grid upsampled to 448x448 pixels, and refinement over that
pixel grid with the default dilation set. Best-of-5 wall times.

Usage: python3 benchmarks/bench_kernels.py [repeats]
"""

import importlib
import sys
import time

import numpy as np

from patchlink.kernels import _fallback
from patchlink.mask_refine import neighbor_offsets

try:
    _native = importlib.import_module("patchlink.kernels._native")
except ImportError:
    _native = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    rng = np.random.default_rng(0)

    volume = rng.standard_normal((21, 32, 32))
    image = rng.uniform(0.0, 1.0, size=(448, 448, 3))
    offsets = neighbor_offsets((1, 2, 4, 8, 12, 24))
    scores = rng.standard_normal((21, 448, 448))

    aff = _fallback.affinity_weights(image, offsets, 1e-4)
    cases = [
        ("bilinear 21x32x32 -> 448x448", lambda m: m.bilinear_upsample_batch(volume, 448, 448)),
        ("affinity 448x448, 48 offsets", lambda m: m.affinity_weights(image, offsets, 1e-4)),
        ("refine 21 classes, 10 iters", lambda m: m.refine_scores(scores, aff, offsets, 10)),
    ]

    print(f"{'kernel':<32} {'fallback':>10} {'native':>10} {'speedup':>8}")
    for label, call in cases:
        fb = best_of(lambda: call(_fallback), repeats)
        if _native is None:
            print(f"{label:<32} {fb * 1e3:9.1f}ms {'n/a':>10} {'n/a':>8}")
            continue
        nat = best_of(lambda: call(_native), repeats)
        print(f"{label:<32} {fb * 1e3:9.1f}ms {nat * 1e3:9.1f}ms {fb / nat:7.1f}x")

    if _native is None:
        print("\ncompiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
