"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 5]

Prints one row per kernel with the best wall time of each backend and the
speed-up, after checking that both backends return the same numbers.
"""

import argparse
import time

import numpy as np

from vod import _kernels_py
from vod._backend import compiled_kernels


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def product_inputs(rng, m, k):
    log_s = np.log(rng.dirichlet(np.ones(k), size=m))
    log_zeta = rng.normal(size=(m, k))
    logits = rng.normal(size=(m, k))
    return log_s, log_zeta, logits, np.full(m, k, dtype=np.int64)


def cases(rng):
    p = rng.dirichlet(np.ones(20))
    f = rng.normal(size=20)
    u = 1.0 - rng.random((200_000, 20))
    yield "priority_estimate_batch N=20 K=5 x200k", lambda mod: mod.priority_estimate_batch(p, f, u, 5, False)
    keys = rng.exponential(size=100_000)
    yield "priority_select N=100k K=1000", lambda mod: mod.priority_select(keys, 1000)
    args = product_inputs(rng, 4, 8)
    yield "product_enumerate M=4 K=8", lambda mod: mod.product_enumerate(*args, 0, 0.5)
    yield "product_values M=4 K=8", lambda mod: mod.product_values(*args, 0.0)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    compiled = compiled_kernels()
    if compiled is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace` first")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'numpy [ms]':>11s} {'compiled [ms]':>14s} {'speed-up':>9s}")
    for name, run in cases(rng):
        a, b = run(_kernels_py), run(compiled)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            if np.ndim(x) and np.asarray(x).dtype.kind == "f":
                np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)
        t_py = best_of(lambda: run(_kernels_py), args.repeats)
        t_c = best_of(lambda: run(compiled), args.repeats)
        print(f"{name:42s} {t_py * 1e3:11.2f} {t_c * 1e3:14.2f} {t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
