"""Compare the numba and pure-numpy kernels.

Part one times each kernel from both backends in this process. Part two
times whole training epochs in two subprocesses, one with
MISC_RL_DISABLE_NUMBA=1, since the flag is read at import.

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from misc_rl.kernels import _numba as nb
from misc_rl.kernels import _numpy as npk


def best_of(fn, repeat, number):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times)


def kernel_cases(rng):
    # batch 512 through a 64-wide relu layer, as in an estimator update
    x = rng.normal(size=(512, 64))
    w = rng.normal(size=(64, 64)) * 0.1
    b = rng.normal(size=64)
    z, y = npk.dense_forward(x, w, b, 1)
    gy = rng.normal(size=y.shape)
    gw, gb = np.empty_like(w), np.empty_like(b)
    p, g = rng.normal(size=13_000), rng.normal(size=13_000)
    m, v = np.zeros_like(p), np.zeros_like(p)
    tgt = p.copy()
    scores = rng.normal(size=(4, 256))
    scores_big = rng.normal(size=10_000)
    state = np.array([0.0, 0.0, 0.04, 0.0, 0.5, 0.5])
    act = np.array([0.05, 0.0])
    return {
        "dense_forward 512x64x64": lambda k: k.dense_forward(x, w, b, 1),
        "dense_backward 512x64x64": lambda k: k.dense_backward(x, w, z, y, 1, gy, gw, gb),
        "adam_update 13k params": lambda k: k.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 10),
        "polyak 13k params": lambda k: k.polyak(tgt, p, 0.95),
        "pair_dv 256 rows": lambda k: k.pair_dv(*scores),
        "logsumexp 10k": lambda k: k.logsumexp(scores_big),
        "push_step 2 objects": lambda k: k.push_step(state, act, 2, 0.05, 0.06, -1.0, 1.0),
    }


def bench_kernels(quick):
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    for fn in cases.values():
        fn(nb)  # compile
    repeat, number = (3, 50) if quick else (5, 300)
    print(f"{'kernel':<28} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for name, fn in cases.items():
        t_np = best_of(lambda: fn(npk), repeat, number) * 1e6
        t_nb = best_of(lambda: fn(nb), repeat, number) * 1e6
        print(f"{name:<28} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>7.2f}x")


EPOCH_SNIPPET = """
import time
from misc_rl.config import RunConfig
from misc_rl.kernels import BACKEND
from misc_rl.training import run_training
cfg = RunConfig(env="point-push", variant="intrinsic_only", epochs=1, n_cycles={cycles})
run_training("point-push", cfg)  # warm-up and compilation
t0 = time.perf_counter()
run_training("point-push", cfg.replace(epochs={epochs}))
print(BACKEND, (time.perf_counter() - t0) / {epochs})
"""


def bench_epochs(quick):
    cycles, epochs = (2, 1) if quick else (10, 3)
    code = EPOCH_SNIPPET.format(cycles=cycles, epochs=epochs)
    print(f"\ntraining epoch ({cycles} cycles, point-push, intrinsic-only)")
    for flag in ("0", "1"):
        env = dict(os.environ, MISC_RL_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"  {backend:<6} {float(secs):.3f} s/epoch")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="fewer repeats, shorter epochs")
    args = parser.parse_args()
    bench_kernels(args.quick)
    bench_epochs(args.quick)


if __name__ == "__main__":
    main()
