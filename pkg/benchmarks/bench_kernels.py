"""Compiled vs pure-Python kernels, and one full training step per backend.

    python benchmarks/bench_kernels.py [--repeat N]

The kernel table calls both implementations in-process. The training-step
rows run in subprocesses because the backend is fixed at import time
(``SSB_PURE_PYTHON=1`` forces the fallback).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ssbridge import kernels

STEP_SNIPPET = """
import timeit
from ssbridge import kernels
from ssbridge.predictor.train import TrainConfig, train
from ssbridge.schedule import make_schedule
from ssbridge.synthdata import DatasetConfig, generate
recs = generate(DatasetConfig(count=32))
s = make_schedule(50)
cfg = TrainConfig(steps={steps}, batch={batch}, lr=1e-3)
train(recs, TrainConfig(steps=1, batch={batch}), s)
t = min(timeit.repeat(lambda: train(recs, cfg, s), number=1, repeat={repeat}))
print(kernels.BACKEND, t / {steps})
"""


def best(fn, repeat, number):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_rows(repeat):
    r = np.random.default_rng(0)
    rows = []
    for b, hw, c in [(16, 32, 16), (16, 16, 32), (16, 32, 48)]:
        x = r.standard_normal((b, hw, hw, c)).astype(np.float32)
        cols = kernels.im2col_py(x, 3, 1, 1)
        gamma, beta = np.ones(c, np.float32), np.zeros(c, np.float32)
        y, xhat, inv = kernels.group_norm_fwd_py(x, gamma, beta, 8, 1e-5)
        d = r.standard_normal(x.shape).astype(np.float32)
        pairs = [
            ("im2col", lambda: kernels.im2col(x, 3, 1, 1), lambda: kernels.im2col_py(x, 3, 1, 1)),
            ("col2im", lambda: kernels.col2im(cols, hw, hw, 1, 1),
             lambda: kernels.col2im_py(cols, hw, hw, 1, 1)),
            ("group_norm_fwd", lambda: kernels.group_norm_fwd(x, gamma, beta, 8, 1e-5),
             lambda: kernels.group_norm_fwd_py(x, gamma, beta, 8, 1e-5)),
            ("group_norm_bwd", lambda: kernels.group_norm_bwd(d, xhat, inv, gamma, 8),
             lambda: kernels.group_norm_bwd_py(d, xhat, inv, gamma, 8)),
        ]
        for name, fast, slow in pairs:
            tf, ts = best(fast, repeat, 5), best(slow, repeat, 5)
            rows.append((f"{name} {b}x{hw}x{hw}x{c}", tf, ts))
    return rows


def step_time(pure, steps, batch, repeat):
    env = dict(os.environ)
    env.pop("SSB_PURE_PYTHON", None)
    if pure:
        env["SSB_PURE_PYTHON"] = "1"
    code = STEP_SNIPPET.format(steps=steps, batch=batch, repeat=repeat)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--steps", type=int, default=10)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    if kernels.BACKEND != "compiled":
        print("compiled extension not built; kernel comparison would be python vs python")
    print(f"{'kernel':<34} {'compiled ms':>12} {'python ms':>10} {'speedup':>8}")
    for name, tf, ts in kernel_rows(args.repeat):
        print(f"{name:<34} {tf * 1e3:12.3f} {ts * 1e3:10.3f} {ts / tf:7.2f}x")

    print(f"\ntraining step, batch {args.batch}, 32x32, default UNet")
    times = {}
    for pure in (False, True):
        backend, t = step_time(pure, args.steps, args.batch, args.repeat)
        times[backend] = t
        print(f"{backend:<10} {t * 1e3:9.1f} ms/step")
    if len(times) == 2:
        print(f"speedup    {times['python'] / times['compiled']:9.2f}x")


if __name__ == "__main__":
    main()
