"""Compare the compiled kernel core against the pure-numpy fallback.

Runs the three convolution kernels and the nearest-row scan at shapes the
training loop actually uses, on both backends, and prints a table with the
speedup and the im2col buffer each numpy conv call materializes. The numpy
conv path leans on BLAS and wins outright at small shapes; the compiled
direct loop holds memory at O(output) and wins the nearest-row scan, which
is what the import-time dispatch in ented._kernels encodes. Backends are
imported directly so one process can time both; `ENTED_FORCE_NUMPY=1`
remains the way to force the fallback for a whole run.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ented._kernels import BACKEND, _numpy_impl

try:
    from ented._kernels import _core_cy
except ImportError:
    _core_cy = None


def _im2col_mb(w_shape, out_hw: int) -> float:
    c_out, c_in, kh, kw = w_shape
    return c_in * kh * kw * out_hw * 8 / 1e6


# (label, im2col MB or None, fn_name, args)
def _cases(rng: np.random.Generator):
    x32 = rng.normal(size=(16, 32, 32))
    w32 = rng.normal(size=(32, 16, 3, 3))
    g32 = rng.normal(size=(32, 32, 32))
    x16 = rng.normal(size=(32, 16, 16))
    w16 = rng.normal(size=(64, 32, 3, 3))
    g8 = rng.normal(size=(64, 8, 8))
    xbig = rng.normal(size=(128, 64, 64))
    wbig = rng.normal(size=(128, 128, 3, 3))
    vecs = rng.normal(size=(512, 32))
    table = rng.normal(size=(64, 32))
    return [
        ("conv fwd 16x32x32 s1", _im2col_mb(w32.shape, 32 * 32),
         "conv2d_forward", (x32, w32, 1, 1)),
        ("conv fwd 32x16x16 s2", _im2col_mb(w16.shape, 8 * 8),
         "conv2d_forward", (x16, w16, 2, 1)),
        ("conv fwd 128x64x64 s1", _im2col_mb(wbig.shape, 64 * 64),
         "conv2d_forward", (xbig, wbig, 1, 1)),
        ("conv wgrad 16x32x32", _im2col_mb(w32.shape, 32 * 32),
         "conv2d_weight_grad", (x32, g32, w32.shape, 1, 1)),
        ("conv igrad 32x16x16", _im2col_mb(w16.shape, 8 * 8),
         "conv2d_input_grad", (w16, g8, x16.shape, 2, 1)),
        ("nearest rows 512x32 K=64", None, "nearest_rows", (vecs, table)),
    ]


def _time(fn, args, repeats: int) -> float:
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    print(f"active backend: {BACKEND}")
    if _core_cy is None:
        print("compiled core not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    header = (f"{'case':26s} {'numpy':>10s} {'compiled':>10s} {'compiled/np':>11s}"
              f" {'im2col buf':>10s}")
    print(header)
    print("-" * len(header))
    for label, mb, name, call_args in _cases(rng):
        t_np = _time(getattr(_numpy_impl, name), call_args, args.repeats)
        buf = f"{mb:8.1f}MB" if mb is not None else f"{'-':>10s}"
        if _core_cy is not None:
            t_cy = _time(getattr(_core_cy, name), call_args, args.repeats)
            # both backends must agree before their times mean anything
            a = getattr(_numpy_impl, name)(*call_args)
            b = getattr(_core_cy, name)(*call_args)
            if not isinstance(a, tuple):
                a, b = (a,), (b,)
            for got_np, got_cy in zip(a, b):
                np.testing.assert_allclose(got_np, got_cy, rtol=1e-10, atol=1e-12)
            print(f"{label:26s} {t_np * 1e3:9.3f}ms {t_cy * 1e3:9.3f}ms"
                  f" {t_cy / t_np:10.2f}x {buf}")
        else:
            print(f"{label:26s} {t_np * 1e3:9.3f}ms {'-':>10s} {'-':>11s} {buf}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
