"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from tidalstream import _purepy

try:
    from tidalstream import _kernels
except ImportError:
    _kernels = None


def cases():
    g = np.random.default_rng(0)
    for n in (100, 1000, 10000):
        w = g.uniform(0.1, 1.0, n)
        s = w * g.normal(size=n)
        yield f"pava n={n}", "pava", (w, s)
    n, dt = 1600, 0.005
    t = (np.arange(2 * n + 1) - n) * dt
    x = np.r_[np.cumsum(g.normal(0, dt ** 0.5, n))[::-1], 0.0,
              np.cumsum(g.normal(0, dt ** 0.5, n))] + t * t
    yield "d_statistic L=8 dt=0.005", "d_statistic", (x, dt, n, 50)


def best_time(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.2:
        number *= 2
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'case':<28}{'python':>12}{'cython':>12}{'speedup':>10}")
    for label, name, a in cases():
        tp = best_time(getattr(_purepy, name), a, args.repeat)
        if _kernels is None:
            print(f"{label:<28}{tp * 1e6:>10.1f}us{'n/a':>12}{'':>10}")
            continue
        tc = best_time(getattr(_kernels, name), a, args.repeat)
        print(f"{label:<28}{tp * 1e6:>10.1f}us{tc * 1e6:>10.1f}us{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
