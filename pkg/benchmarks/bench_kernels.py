"""Time the compiled and pure-Python kernels on a simulated dataset.

    python benchmarks/bench_kernels.py [--pairs N] [--window PS] [--repeat K]
"""

import argparse
import time

import numpy as np

from eprb import kernels
from eprb.coincidence import greedy_keep
from eprb.sim import SimConfig, simulate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=1_000_000)
    ap.add_argument("--window", type=int, default=100_000, help="matching window in ps")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    d = simulate(SimConfig(n_pairs=args.pairs, seed=1))
    t1, t2 = d.station1.t, d.station2.t
    n1, n2 = len(t1), len(t2)
    backends = kernels.backends()
    print(f"{args.pairs} pairs, W={args.window} ps, active backend: {kernels.BACKEND}")
    print(f"{'kernel':<18}" + "".join(f"{name:>14}" for name in backends))

    results = {}
    for name, mod in backends.items():
        i, j, dt = mod.candidate_pairs(t1, t2, args.window)
        order = np.argsort(np.abs(dt), kind="stable")
        # candidates in |dt| order, as greedy_keep feeds them
        io, jo = i[order], j[order]
        results[name] = {
            "candidate_pairs": best_of(lambda: mod.candidate_pairs(t1, t2, args.window), args.repeat),
            "greedy_accept": best_of(lambda: mod.greedy_accept(io, jo, n1, n2), args.repeat),
            "sequential_match": best_of(lambda: mod.sequential_match(t1, t2, args.window), args.repeat),
            "diff_histogram": best_of(lambda: mod.diff_histogram(t1, t2, 500, 1_000_000), args.repeat),
        }
    for kernel in next(iter(results.values())):
        print(f"{kernel:<18}" + "".join(f"{results[n][kernel] * 1e3:>12.1f}ms" for n in backends))
    i, j, dt = kernels.candidate_pairs(t1, t2, args.window)
    t = best_of(lambda: greedy_keep(i, j, dt, n1, n2), args.repeat)
    print(f"greedy_keep (active backend, incl. sort): {t * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
