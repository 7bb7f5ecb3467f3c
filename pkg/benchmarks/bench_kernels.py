"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--rows N] [--width V] [--repeats K]

Times each hot kernel on both paths at a transformer-step-like shape and at
a larger shape, then times a short end-to-end training run under each
backend (spawned as subprocesses so SELKD_BACKEND is read fresh).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from selkd import _kernels_numpy as knp

try:
    from selkd import _kernels_numba as knb

    HAS_NUMBA = True
except ImportError:
    knb = None
    HAS_NUMBA = False


def time_call(fn, *args, repeats):
    fn(*args)  # warm-up (JIT + cache)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_shape(rows, width, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, width))
    g = rng.normal(size=(rows, width))
    gain = rng.normal(size=width)
    bias = rng.normal(size=width)
    ids = rng.integers(0, rows, size=rows).astype(np.int64)
    table = np.zeros((rows, width))
    p = rng.normal(size=rows * width)
    grad = rng.normal(size=rows * width)
    m = np.zeros(rows * width)
    v = np.zeros(rows * width)

    logp = knp.log_softmax_fwd(x)
    s = knp.softmax_fwd(x)
    _, xhat, inv_std = knp.layer_norm_fwd(x, gain, bias, 1e-5)

    cases = {
        "log_softmax_fwd": (lambda k: k.log_softmax_fwd(x),),
        "log_softmax_bwd": (lambda k: k.log_softmax_bwd(logp, g),),
        "softmax_fwd": (lambda k: k.softmax_fwd(x),),
        "softmax_bwd": (lambda k: k.softmax_bwd(s, g),),
        "layer_norm_fwd": (lambda k: k.layer_norm_fwd(x, gain, bias, 1e-5),),
        "layer_norm_bwd": (lambda k: k.layer_norm_bwd(g, xhat, inv_std, gain),),
        "scatter_add": (lambda k: k.embedding_scatter_add_(table, ids, g),),
        "adam_update": (lambda k: k.adam_update_(p, grad, m, v, 1e-3, 0.9, 0.98, 1e-8, 1),),
    }
    print(f"\nshape rows={rows} width={width} ({repeats} repeats)")
    print(f"{'kernel':>16} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, (call,) in cases.items():
        t_np = time_call(lambda: call(knp), repeats=repeats)
        if HAS_NUMBA:
            t_nb = time_call(lambda: call(knb), repeats=repeats)
            print(f"{name:>16} {t_np * 1e6:>9.1f}u {t_nb * 1e6:>9.1f}u {t_np / t_nb:>7.2f}x")
        else:
            print(f"{name:>16} {t_np * 1e6:>9.1f}u {'n/a':>10} {'':>8}")


TRAIN_SNIPPET = """
import time
from selkd.data import TaskSpec
from selkd.harness import ExperimentConfig, _Trainer
from selkd.model import TransformerConfig
import selkd
cfg = ExperimentConfig(
    task=TaskSpec(kind="copy", vocab_size=32, len_min=3, len_max=8, seed=0),
    model=TransformerConfig(src_vocab=32, tgt_vocab=32, max_len=12),
    train_steps=150, teacher_steps=150, eval_every=10_000,
    n_train=400, n_val=50, n_test=50, max_tokens=256,
    out_dir="/tmp/selkd_bench", seed=0)
tr = _Trainer(cfg, role="teacher")
tr.steps = 20
tr.run()  # warm-up
tr = _Trainer(cfg, role="teacher")
t0 = time.time()
tr.run()
print(f"  {selkd.active_backend():>6} backend: {150 / (time.time() - t0):6.1f} steps/s")
"""


def bench_training():
    print("\nend-to-end training (2+2 layer model, d=64):")
    for backend in ("numpy", "numba") if HAS_NUMBA else ("numpy",):
        env = dict(os.environ, SELKD_BACKEND=backend)
        subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, check=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--skip-training", action="store_true")
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba not importable: timing the numpy path only")
    bench_shape(args.rows, args.width, args.repeats)
    bench_shape(args.rows * 16, args.width * 8, max(args.repeats // 10, 3))
    if not args.skip_training:
        bench_training()


if __name__ == "__main__":
    main()
