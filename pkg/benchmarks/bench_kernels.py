"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per (kernel, backend) with the best wall time over
``--repeat`` runs and the speedup of the compiled core.
"""

import argparse
import timeit

import numpy as np

from xtnet import kernels


def sinkhorn_case(P=10, n=40, d=32, iters=20, seed=0):
    # shape of one imbalance-loss call: 4 groups -> 6 cross pairs + 4 self pairs
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(P, n, d))
    y = rng.normal(size=(P, n, d))
    nx = rng.integers(n // 2, n + 1, size=P)
    ny = rng.integers(n // 2, n + 1, size=P)
    return x, nx, y, ny, 0.1, iters


def mckp_case(U=200, K=25, budget=800, seed=0):
    rng = np.random.default_rng(seed)
    costs = rng.integers(1, 9, size=(U, K))
    costs[:, 0] = 0
    values = rng.uniform(size=(U, K))
    values[:, 0] = 0.0
    return costs, values, budget


def calls(mod, sk, dp):
    _, hist = mod.sinkhorn_forward(*sk)
    up = np.ones(sk[0].shape[0])
    return {
        "sinkhorn_forward": lambda: mod.sinkhorn_forward(*sk),
        "sinkhorn_backward": lambda: mod.sinkhorn_backward(*sk, hist, up),
        "mckp_dp": lambda: mod.mckp_dp(*dp),
    }


def run(repeat):
    sk, dp = sinkhorn_case(), mckp_case()
    times = {}
    for backend, mod in kernels.backends().items():
        for name, fn in calls(mod, sk, dp).items():
            fn()
            times.setdefault(name, {})[backend] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return times


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    if "compiled" not in kernels.backends():
        print("compiled core not built; only the numpy backend is timed")
    print(f"{'kernel':<20}{'backend':<10}{'best s':>10}{'speedup':>10}")
    for name, times in run(args.repeat).items():
        base = times["python"]
        for backend, t in times.items():
            print(f"{name:<20}{backend:<10}{t:>10.4f}{base / t:>9.1f}x")


if __name__ == "__main__":
    main()
