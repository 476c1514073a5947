"""Compare the compiled and numpy im2col/col2im kernels and a full conv step.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from fanet import kernels
from fanet import tensor as T

CASES = [
    # (batch, channels, size, kernel, stride, dilation)
    (4, 16, 32, 3, 1, 1),
    (4, 16, 32, 3, 2, 1),
    (4, 16, 16, 3, 1, 7),
    (4, 3, 64, 3, 2, 1),
    (4, 64, 8, 7, 1, 1),
]


def _time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(case, backend, repeat):
    b, c, n, k, s, d = case
    rng = np.random.default_rng(0)
    pad = d * (k - 1) // 2
    xp = rng.standard_normal((b, c, n + 2 * pad, n + 2 * pad)).astype(np.float32)
    out = (n + 2 * pad - d * (k - 1) - 1) // s + 1
    cols = kernels.im2col(xp, k, k, s, d, out, out, backend=backend)
    fwd = _time(lambda: kernels.im2col(xp, k, k, s, d, out, out, backend=backend), repeat)
    bwd = _time(lambda: kernels.col2im(cols, b, c, xp.shape[2], xp.shape[3], k, k, s, d, out, out,
                                       backend=backend), repeat)
    return fwd, bwd


def bench_conv(repeat):
    """Forward plus backward of one replicate-padded conv through the default backend."""
    rng = np.random.default_rng(0)
    x = T.Tensor(rng.standard_normal((4, 16, 32, 32)).astype(np.float32), requires_grad=True)
    w = T.Tensor(rng.standard_normal((16, 16, 3, 3)).astype(np.float32), requires_grad=True)

    def step():
        x.grad = w.grad = None
        T.backward(T.sum(T.conv2d(x, w, padding=1, pad_mode="replicate")))

    return _time(step, repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    header = f"{'case (b,c,n,k,s,d)':<24}" + "".join(
        f"{name + ' im2col':>16}{name + ' col2im':>16}" for name in backends)
    if "cython" in backends:
        header += f"{'speedup':>10}"
    print(header)
    for case in CASES:
        row = f"{str(case):<24}"
        timings = {}
        for name in backends:
            fwd, bwd = bench_case(case, name, args.repeat)
            timings[name] = fwd + bwd
            row += f"{fwd * 1e3:14.3f}ms{bwd * 1e3:14.3f}ms"
        if "cython" in timings:
            row += f"{timings['python'] / timings['cython']:9.1f}x"
        print(row)
    print(f"conv2d fwd+bwd (4,16,32,32) 3x3, {kernels.BACKEND}: {bench_conv(args.repeat) * 1e3:.3f}ms")


if __name__ == "__main__":
    main()
