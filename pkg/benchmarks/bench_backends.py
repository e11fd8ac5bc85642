#!/usr/bin/env python3
"""Benchmark the numba pooling kernels against the pure-numpy fallback.

Times mqmha forward+backward per utterance for a few representative
configurations, plus one synthetic training step, on both backends.

Usage:
    python benchmarks/bench_backends.py [--repeats 2000]
"""

import argparse
import time

import numpy as np

from miniasv import _pool_np
from miniasv.pooling import PoolingConfig, init_pooling_params

try:
    from miniasv import _pool_nb
except ImportError:
    _pool_nb = None

CONFIGS = [
    ("h=4,  q=2,  n=1, d=16,  T=20", PoolingConfig(dim=16, heads=4, queries=2, attn_layers=1), 20),
    ("h=16, q=4,  n=1, d=32,  T=20", PoolingConfig(dim=32, heads=16, queries=4, attn_layers=1), 20),
    ("h=1,  q=1,  n=2, d=16,  T=20", PoolingConfig(dim=16, heads=1, queries=1, attn_layers=2, hidden_dim=16), 20),
    ("h=16, q=4,  n=1, d=64,  T=100", PoolingConfig(dim=64, heads=16, queries=4, attn_layers=1), 100),
]


def run_once(kernels, config, params, X, gmu, gsigma):
    q, ds, eps = config.queries, config.weight_dim, config.epsilon
    if config.attn_layers == 1:
        mu, var, sigma, W = kernels.forward_n1(X, params.w_out, q, ds, eps)
        kernels.backward_n1(X, params.w_out, W, mu, var, sigma, gmu, gsigma, q, ds, eps)
    else:
        mu, var, sigma, W, R = kernels.forward_n2(X, params.w_hidden, params.w_out, q, ds, eps)
        kernels.backward_n2(X, params.w_hidden, params.w_out, W, R, mu, var, sigma,
                            gmu, gsigma, q, ds, eps)


def time_backend(kernels, config, frames, repeats):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((frames, config.heads, config.head_dim))
    params = init_pooling_params(config, 0)
    stat = (config.heads, config.queries, config.head_dim)
    gmu = rng.standard_normal(stat)
    gsigma = rng.standard_normal(stat)

    run_once(kernels, config, params, X, gmu, gsigma)  # warmup / jit compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        run_once(kernels, config, params, X, gmu, gsigma)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    if _pool_nb is None:
        print("numba not importable; nothing to compare")
        return

    print(f"{'config':<28} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for label, config, frames in CONFIGS:
        t_np = time_backend(_pool_np, config, frames, args.repeats)
        t_nb = time_backend(_pool_nb, config, frames, args.repeats)
        print(f"{label:<28} {1e6 * t_np:>10.1f} {1e6 * t_nb:>10.1f} {t_np / t_nb:>7.1f}x")

    print("\nfull forward+backward training step (batch 64, default config):")
    for name in ("numpy", "numba"):
        import os
        import subprocess
        import sys

        code = (
            "import time, numpy as np\n"
            "from miniasv.experiment import default_config\n"
            "from miniasv.synth import generate_dataset\n"
            "from dataclasses import replace\n"
            "from miniasv.train import train\n"
            "cfg = default_config()\n"
            "cfg = replace(cfg, train=replace(cfg.train, max_steps=40))\n"
            "ds = generate_dataset(cfg.data)\n"
            "train(ds, cfg.encoder, cfg.pooling, cfg.loss, cfg.train)  # warmup\n"
            "t0 = time.perf_counter()\n"
            "train(ds, cfg.encoder, cfg.pooling, cfg.loss, cfg.train)\n"
            "print(f'{(time.perf_counter() - t0) / 40 * 1e3:.2f} ms/step')\n"
        )
        env = dict(os.environ, MINIASV_BACKEND=name)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True)
        print(f"  {name}: {out.stdout.strip() or out.stderr.strip()}")


if __name__ == "__main__":
    main()
