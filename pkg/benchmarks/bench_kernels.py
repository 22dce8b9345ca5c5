"""Timing comparison of the two convolution backends.

Run:  python benchmarks/bench_kernels.py [--repeats N]

Exercises the forward and backward kernels at the shapes the three networks
actually use and prints a table of per-call wall times plus the speedup of
numba over the pure-numpy path. Falls back to numpy-only timing when numba
is unavailable.
"""

import argparse
import time

import numpy as np

from texsmooth.kernels import conv2d_backward, conv2d_forward
from texsmooth.kernels.backend import active_backend, set_backend

# (label, batch, in_ch, out_ch, kernel, height, width, stride)
CASES = [
    ("tpn branch 3x3", 4, 8, 8, 3, 64, 64, 1),
    ("tpn fuse 3x3", 4, 16, 1, 3, 64, 64, 1),
    ("spn stage 3x3 s2", 4, 8, 16, 3, 64, 64, 2),
    ("tsafn head 7x7", 1, 5, 32, 7, 64, 64, 1),
    ("tsafn mid 5x5", 1, 32, 16, 5, 64, 64, 1),
    ("full image 3x3", 1, 8, 8, 3, 256, 256, 1),
]


def _time(fn, repeats):
    fn()  # warm up (numba compiles on first call)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(backend, repeats):
    set_backend(backend)
    rng = np.random.default_rng(0)
    rows = {}
    for label, n, cin, cout, k, h, w, stride in CASES:
        x = rng.standard_normal((n, cin, h, w)).astype(np.float32)
        wgt = (rng.standard_normal((cout, cin, k, k)) * 0.1).astype(np.float32)
        b = np.zeros(cout, np.float32)
        out = conv2d_forward(x, wgt, b, stride=stride)
        g = np.ones_like(out)
        fwd = _time(lambda: conv2d_forward(x, wgt, b, stride=stride), repeats)
        bwd = _time(lambda: conv2d_backward(x, wgt, g, stride=stride), repeats)
        rows[label] = (fwd, bwd)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    try:
        set_backend("numba")
        backends = ["numpy", "numba"]
    except (ValueError, RuntimeError):
        print("numba unavailable; timing numpy only")
        backends = ["numpy"]
    finally:
        set_backend(None)

    results = {}
    for be in backends:
        results[be] = bench(be, args.repeats)
        set_backend(None)

    print(f"{'case':<20s} {'dir':<4s}", *(f"{be:>12s}" for be in backends),
          f"{'speedup':>9s}" if len(backends) == 2 else "")
    for label, *_ in CASES:
        for i, d in enumerate(("fwd", "bwd")):
            cells = [f"{results[be][label][i] * 1e3:9.3f} ms" for be in backends]
            line = f"{label if d == 'fwd' else '':<20s} {d:<4s} " + " ".join(cells)
            if len(backends) == 2:
                line += f" {results['numpy'][label][i] / results['numba'][label][i]:8.1f}x"
            print(line)
    print(f"\nactive backend after reset: {active_backend()}")


if __name__ == "__main__":
    main()
