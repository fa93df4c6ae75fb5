"""Benchmark the compiled kernel core against the pure numpy reference.

Usage:
    python benchmarks/bench_kernels.py [--repeats 200]

Times the LSTM sequence forward/backward and the batched single step at
shapes representative of training (desk model) and of longer inputs.
"""

import argparse
import time

import numpy as np

from condseq import _kernels as K
from condseq._kernels import pyref

try:
    from condseq._kernels import core
except ImportError:
    core = None


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_case(name, L, din, h, batch, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((L, din))
    wx = 0.4 * rng.standard_normal((din, 4 * h))
    wh = 0.4 * rng.standard_normal((h, 4 * h))
    b = 0.1 * rng.standard_normal(4 * h)
    h0 = np.zeros(h)
    c0 = np.zeros(h)
    h_all, c_all, gates = pyref.lstm_seq_forward(x, wx, wh, b, h0, c0)
    dh = rng.standard_normal(h_all.shape)
    xb = rng.standard_normal((batch, din))
    hb = rng.standard_normal((batch, h))
    cb = rng.standard_normal((batch, h))

    rows = []
    for label, mod in (("python", pyref),) + ((("compiled", core),) if core else ()):
        seq_f = timeit(lambda: mod.lstm_seq_forward(x, wx, wh, b, h0, c0), repeats)
        seq_b = timeit(
            lambda: mod.lstm_seq_backward(dh, x, wx, wh, h_all, c_all, gates, h0, c0),
            repeats,
        )
        step = timeit(lambda: mod.lstm_step_forward(xb, hb, cb, wx, wh, b), repeats)
        rows.append((label, seq_f, seq_b, step))

    print(f"\n{name}  (L={L}, d_in={din}, cells={h}, step batch={batch})")
    print(f"  {'backend':<10}{'seq fwd':>12}{'seq bwd':>12}{'step':>12}")
    for label, f, bwd, s in rows:
        print(f"  {label:<10}{f * 1e6:>10.1f}us{bwd * 1e6:>10.1f}us{s * 1e6:>10.1f}us")
    if len(rows) == 2:
        py, cy = rows
        print(
            f"  {'speedup':<10}{py[1] / cy[1]:>11.1f}x{py[2] / cy[2]:>11.1f}x"
            f"{py[3] / cy[3]:>11.1f}x"
        )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    print(f"selected backend: {K.BACKEND}")
    if core is None:
        print("compiled core not built; showing python reference only")
    bench_case("desk encoder shape", L=16, din=16, h=32, batch=8, repeats=args.repeats)
    bench_case("long utterance", L=200, din=16, h=32, batch=8, repeats=args.repeats)
    bench_case("wide layer", L=50, din=64, h=64, batch=16, repeats=args.repeats)


if __name__ == "__main__":
    main()
