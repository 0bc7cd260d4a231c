"""Compare the compiled convolution kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--dtype float32]

Shapes follow the toy and full-size networks: 3x3 convs at the stem, 1x1
projections inside blocks, the 7x7 stride-2 prompt encoder conv and the 3x3
depthwise convs of the attention and feed-forward branches.
"""
import argparse
import timeit

import numpy as np

from tgpnet.kernels import _fallback

try:
    from tgpnet.kernels import _ckernels
except ImportError:
    _ckernels = None

CONV = [
    # name, x shape, w shape, stride, padding
    ("stem 3x3 C=8 @32", (4, 3, 32, 32), (8, 3, 3, 3), 1, 1),
    ("1x1 16->48 @16", (4, 16, 16, 16), (48, 16, 1, 1), 1, 0),
    ("ltse 7x7 s2 @64", (1, 1, 64, 64), (16, 1, 7, 7), 2, 3),
    ("stem 3x3 C=48 @128", (1, 3, 128, 128), (48, 3, 3, 3), 1, 1),
]
DEPTHWISE = [
    ("dw 3x3 c=24 @32", (4, 24, 32, 32), (24, 1, 3, 3)),
    ("dw 3x3 c=254 @64", (1, 254, 64, 64), (254, 1, 3, 3)),
]


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return
    dt = np.dtype(args.dtype)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22} {'pass':<8} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, xs, ws, s, p in CONV:
        x, w = rng.normal(size=xs).astype(dt), rng.normal(size=ws).astype(dt)
        gy = rng.normal(size=_ckernels.conv2d_forward(x, w, s, p).shape).astype(dt)
        for label, py, cy in [
            ("forward", lambda: _fallback.conv2d_forward(x, w, s, p),
             lambda: _ckernels.conv2d_forward(x, w, s, p)),
            ("backward", lambda: _fallback.conv2d_backward(x, w, gy, s, p),
             lambda: _ckernels.conv2d_backward(x, w, gy, s, p)),
        ]:
            tp, tc = best(py, args.repeat), best(cy, args.repeat)
            print(f"{name:<22} {label:<8} {tp * 1e3:>10.2f} {tc * 1e3:>10.2f} {tp / tc:>7.1f}x")
    for name, xs, ws in DEPTHWISE:
        x, w = rng.normal(size=xs).astype(dt), rng.normal(size=ws).astype(dt)
        gy = rng.normal(size=xs).astype(dt)
        for label, py, cy in [
            ("forward", lambda: _fallback.dwconv_forward(x, w, 1),
             lambda: _ckernels.dwconv_forward(x, w, 1)),
            ("backward", lambda: _fallback.dwconv_backward(x, w, gy, 1),
             lambda: _ckernels.dwconv_backward(x, w, gy, 1)),
        ]:
            tp, tc = best(py, args.repeat), best(cy, args.repeat)
            print(f"{name:<22} {label:<8} {tp * 1e3:>10.2f} {tc * 1e3:>10.2f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
