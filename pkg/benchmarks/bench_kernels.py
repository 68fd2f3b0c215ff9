"""Compare the compiled kernels against the pure-python fallback.

Usage:

    python3 benchmarks/bench_kernels.py [--repeats 5]

Reports per-backend wall time and the speedup, and verifies that both
backends agree on every output before timing anything.
"""

import argparse
import string
import time

import numpy as np

from gencrs._kernels import available_backends


def time_call(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - started)
    return best


def bench_trigrams(backends, repeats: int):
    rng = np.random.default_rng(0)
    alphabet = np.frombuffer(
        (string.ascii_lowercase + " ").encode(), dtype=np.uint8)
    texts = [alphabet[rng.integers(0, len(alphabet), size=400)]
             .astype(np.int32) for _ in range(300)]

    def run(mod):
        return [mod.trigram_counts(t, 64, 7) for t in texts]

    outputs = {name: run(mod) for name, mod in backends.items()}
    names = list(outputs)
    for a, b in zip(outputs[names[0]], outputs[names[-1]]):
        assert np.array_equal(a, b), "backend outputs disagree"
    return {name: time_call(run, mod, repeats=repeats)
            for name, mod in backends.items()}


def bench_nearest(backends, repeats: int, n: int, k: int, d: int,
                  calls: int):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(n, d))
    codebook = rng.normal(size=(k, d))

    outputs = {name: mod.nearest_codes(X, codebook)
               for name, mod in backends.items()}
    names = list(outputs)
    assert np.array_equal(outputs[names[0]], outputs[names[-1]]), (
        "backend outputs disagree")

    def run(mod):
        for _ in range(calls):
            mod.nearest_codes(X, codebook)

    return {name: time_call(run, mod, repeats=repeats)
            for name, mod in backends.items()}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    if len(backends) == 1:
        print("compiled extension not built; timing the fallback only")

    cases = [
        ("trigram_counts (300 texts)",
         lambda: bench_trigrams(backends, args.repeats)),
        # quantize-one-item regime: tiny batches, many calls
        ("nearest_codes small (n=8 k=16 d=8, 2000 calls)",
         lambda: bench_nearest(backends, args.repeats,
                               n=8, k=16, d=8, calls=2000)),
        # k-means regime: one big batched call, BLAS territory
        ("nearest_codes large (n=4000 k=64 d=32, 1 call)",
         lambda: bench_nearest(backends, args.repeats,
                               n=4000, k=64, d=32, calls=1)),
    ]
    for title, bench in cases:
        times = bench()
        print(f"\n{title}:")
        for name, seconds in times.items():
            print(f"  {name:8s} {seconds * 1e3:9.2f} ms")
        if "cython" in times and "python" in times:
            print(f"  speedup  {times['python'] / times['cython']:9.2f}x")


if __name__ == "__main__":
    main()
