"""Time each hot kernel on the compiled core and on the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--n 2000]

Prints the best-of-``repeat`` wall time per backend and the speedup. The
inputs mirror the sizes of a 2,000-respondent, 6-factor run.
"""

import argparse
import time

import numpy as np

from interclust import _pure
from interclust.boosted_predictor import fit

try:
    from interclust import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(n, rng):
    X = np.vstack([rng.normal(4.0, 0.3, (n // 2, 6)), rng.normal(3.3, 0.3, (n - n // 2, 6))])
    labels = np.repeat([0, 1], [n // 2, n - n // 2]).astype(np.intp)
    r = rng.normal(size=n)
    idx = np.arange(n, dtype=np.intp)
    y = np.repeat([1, 2], [n // 2, n - n // 2])
    model = fit(X, y, n_trees=100, max_depth=10)
    flat = model._flatten()
    Xw = X[: min(n, 1000)]
    return {
        "cluster_distance_sums": lambda m: m.cluster_distance_sums(X, labels, 2),
        "ward_linkage": lambda m: m.ward_linkage(Xw),
        "mean_shift_seeds": lambda m: m.mean_shift_seeds(X, X, 1.0, 300, 1e-6),
        "best_split": lambda m: m.best_split(X, r, idx),
        "predict_forest": lambda m: m.predict_forest(*flat, np.repeat(X, 5, axis=0), 1),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled core not built; only the fallback can be timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24}{'cython (s)':>12}{'python (s)':>12}{'speedup':>10}")
    for name, call in cases(args.n, rng).items():
        tp = best_of(lambda: call(_pure), args.repeat)
        if _core is not None:
            tc = best_of(lambda: call(_core), args.repeat)
            print(f"{name:<24}{tc:>12.4f}{tp:>12.4f}{tp / tc:>9.1f}x")
        else:
            print(f"{name:<24}{'-':>12}{tp:>12.4f}{'-':>10}")


if __name__ == "__main__":
    main()
