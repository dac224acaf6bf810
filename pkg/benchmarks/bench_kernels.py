"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from graftsurv import _kernels


def cases(rng):
    n, p = 6000, 6
    stop = rng.integers(1, 3650, n).astype(float)
    start = np.floor(stop * rng.random(n) * (rng.random(n) < 0.7))
    event = rng.random(n) < 0.2
    X = rng.normal(size=(n, p))
    beta = rng.normal(scale=0.2, size=p)
    yield "cox_derivatives (6000 x 6, Efron)", lambda k: k.cox_derivatives(start, stop, event, X, beta, True)

    m = 700
    T = rng.integers(1, 3650, m).astype(float)
    ev = rng.random(m) < 0.3
    el = np.ones(m, bool)
    rank = rng.permutation(m)
    W = rng.integers(0, 3, (200, m)).astype(float)
    yield "weighted_concordance (700 patients, 200 weights)", lambda k: k.weighted_concordance(T, ev, el, rank, W)

    q = 2000
    Xs = rng.normal(size=(q, 3))
    t = rng.integers(1, 3650, q).astype(float)
    e = rng.random(q) < 0.3
    yield "best_logrank_split (2000 rows, 3 features)", lambda k: k.best_logrank_split(Xs, t, e, 3)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("numpy", _kernels.python_backend())]
    compiled = _kernels.compiled_backend()
    if compiled is None:
        print("compiled extension not available; timing the numpy backend only")
    else:
        backends.append(("cython", compiled))
    print(f"{'kernel':52s} " + " ".join(f"{name:>10s}" for name, _ in backends) + "   speedup")
    for label, fn in cases(np.random.default_rng(0)):
        times = [min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) for _, k in backends]
        speed = f"{times[0] / times[1]:8.1f}x" if len(times) == 2 else ""
        print(f"{label:52s} " + " ".join(f"{t * 1000:8.1f}ms" for t in times) + f"  {speed}")


if __name__ == "__main__":
    main()
