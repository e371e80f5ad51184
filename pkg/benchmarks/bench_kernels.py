#!/usr/bin/env python3
"""Benchmark the numba and numpy kernel backends against each other.

Covers each hot kernel (causal softmax, layer norm, GELU, Adam) plus one
end-to-end training step of the full multimodal model under both uniform
backends and the auto mix. Run:

    python3 benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from preflab import envs, models, training
from preflab.autodiff import kernels
from preflab.data import PreferenceDataset, PreferenceTriple, sample_pairs


def timeit(fn, repeats):
    fn()  # warmup (numba compiles here)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(128, 32, 32)).astype(np.float32)
    probs = None
    x = rng.normal(size=(1024, 64)).astype(np.float32)
    gain = np.ones(64, dtype=np.float32)
    bias = np.zeros(64, dtype=np.float32)
    gout = rng.normal(size=x.shape).astype(np.float32)
    big = rng.normal(size=(32, 32, 256)).astype(np.float32)
    param = rng.normal(size=16384).astype(np.float32)
    grad = rng.normal(size=16384).astype(np.float32)
    m = np.zeros_like(param)
    v = np.zeros_like(param)

    cases = {
        "causal_softmax_fwd": lambda: kernels.causal_softmax_fwd(logits),
        "causal_softmax_bwd": lambda: kernels.causal_softmax_bwd(
            kernels.causal_softmax_fwd(logits), logits
        ),
        "layernorm_fwd": lambda: kernels.layernorm_fwd(x, gain, bias, np.float32(1e-5)),
        "layernorm_bwd": lambda: kernels.layernorm_bwd(
            x, gain, *kernels.layernorm_fwd(x, gain, bias, np.float32(1e-5))[1:], gout
        ),
        "gelu_fwd": lambda: kernels.gelu_fwd(big),
        "gelu_bwd": lambda: kernels.gelu_bwd(big, kernels.gelu_fwd(big)[1], big),
        "adam_step": lambda: kernels.adam_step(
            param, grad, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.0, 0.1, 0.001
        ),
    }

    results = {}
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        for name, fn in cases.items():
            results.setdefault(name, {})[backend] = timeit(fn, repeats)
    return results


def bench_train_step(repeats):
    spec = envs.env_spec("maze7", n_episodes=12, seed=0)
    episodes = envs.generate(spec)
    pairs = sample_pairs({e.id: e for e in episodes}, 16, 32, seed=0)
    ds = PreferenceDataset()
    for i, (s0, s1) in enumerate(pairs):
        if s0.id not in ds.trajectories:
            ds.add_trajectory(s0)
        if s1.id not in ds.trajectories:
            ds.add_trajectory(s1)
        ds.add_triple(PreferenceTriple(s0.id, s1.id, float(i % 2)))
    cfg = models.ModelConfig(variant="multimodal", d_s=6, d_a=4)
    results = {}
    for backend in ("numpy", "numba", "auto"):
        if backend == "numba" and "numba" not in kernels.available_backends():
            continue
        kernels.use_backend(backend)
        model = models.RewardModel.create(cfg, seed=0)
        results[backend] = timeit(
            lambda: training.fit(ds, model, training.TrainConfig(epochs=1, seed=0)),
            max(1, repeats // 10),
        )
    return results


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    print(f"backends available: {kernels.available_backends()}")
    results = bench_kernels(args.repeats)
    backends = kernels.available_backends()
    header = f"{'kernel':<22}" + "".join(f"{b + ' (ms)':>14}" for b in backends) + f"{'winner':>10}"
    print("\n" + header)
    print("-" * len(header))
    for name, per in results.items():
        winner = min(per, key=per.get)
        row = f"{name:<22}" + "".join(f"{per[b]:>14.4f}" for b in backends) + f"{winner:>10}"
        print(row)

    print("\nfull multimodal training epoch (16 triples, T=32, d_model=64):")
    for backend, ms in bench_train_step(args.repeats).items():
        print(f"  {backend:<8} {ms:9.1f} ms")

    kernels.use_backend("auto")
    print("\nauto mix in effect:")
    for name, impl in sorted(kernels.backend_table().items()):
        print(f"  {name:<22} -> {impl}")


if __name__ == "__main__":
    main()
