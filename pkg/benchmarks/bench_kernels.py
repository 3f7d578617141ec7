"""Time the compiled kernels against their numpy twins.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--batch B]

Shapes follow the default desk-scale network on 24x24 Sobel inputs.  Each
row reports the median of ``--repeat`` runs and whether both backends
returned bitwise-identical results.
"""
import argparse
import statistics
import time

import numpy as np

from deepcluster import _kernels_py

try:
    from deepcluster import _kernels as compiled
except ImportError:
    compiled = None


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _cases(batch, rng):
    x1 = rng.standard_normal((batch, 2, 24, 24)).astype(np.float32)
    x2 = rng.standard_normal((batch, 16, 12, 12)).astype(np.float32)
    c1 = _kernels_py.im2col(x1, 3, 3, 1, 1)
    c2 = _kernels_py.im2col(x2, 3, 3, 1, 1)
    p1 = rng.standard_normal((batch, 16, 24, 24)).astype(np.float32)
    _, a1 = _kernels_py.maxpool_forward(p1, 2, 2)
    g1 = rng.standard_normal((batch, 16, 12, 12)).astype(np.float32)
    return [
        ("im2col conv1", "im2col", (x1, 3, 3, 1, 1)),
        ("im2col conv2", "im2col", (x2, 3, 3, 1, 1)),
        ("col2im conv1", "col2im", (c1, batch, 2, 24, 24, 3, 3, 1, 1)),
        ("col2im conv2", "col2im", (c2, batch, 16, 12, 12, 3, 3, 1, 1)),
        ("maxpool fwd", "maxpool_forward", (p1, 2, 2)),
        ("maxpool bwd", "maxpool_backward", (g1, a1, 24, 24, 2, 2)),
    ]


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=256)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"batch={args.batch} repeat={args.repeat}")
    print(f"{'kernel':<14} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8}  identical")
    for label, name, call_args in _cases(args.batch, rng):
        fast = getattr(compiled, name)
        slow = getattr(_kernels_py, name)
        tc = _median_time(lambda: fast(*call_args), args.repeat)
        tp = _median_time(lambda: slow(*call_args), args.repeat)
        same = _same(fast(*call_args), slow(*call_args))
        print(f"{label:<14} {tc * 1e3:10.2f} {tp * 1e3:10.2f} {tp / tc:7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
