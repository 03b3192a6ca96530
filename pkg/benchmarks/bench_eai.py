"""Benchmark the compiled exposure-fusion kernel against the numpy
fallback on a 512x512x3 image.

Usage: python benchmarks/bench_eai.py [--repeats N] [--size HxW]
"""

import argparse
import time

import numpy as np

from nightiqa import eai


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--size", default="512x512")
    args = parser.parse_args()
    h, w = (int(v) for v in args.size.split("x"))

    rng = np.random.default_rng(0)
    image = (rng.random((h, w, 3)) * 0.4).astype(np.float32)

    fallback = _time(lambda: eai.make_eai(image, use_fast=False), args.repeats)
    print(f"numpy fallback : {fallback * 1e3:9.2f} ms")

    if not eai.HAVE_FAST_KERNEL:
        print("compiled kernel: not built (pure-python install)")
        return

    fast = _time(lambda: eai.make_eai(image, use_fast=True), args.repeats)
    print(f"compiled kernel: {fast * 1e3:9.2f} ms  ({fallback / fast:.1f}x)")

    a = eai.make_eai(image, use_fast=False)
    b = eai.make_eai(image, use_fast=True)
    print(f"max |diff|     : {np.abs(a - b).max():.3g}")


if __name__ == "__main__":
    main()
