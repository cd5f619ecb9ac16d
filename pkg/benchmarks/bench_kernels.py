"""Time the compiled trace kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--iters N] [--repeat R]
"""
import argparse
import time

import numpy as np

from inclusion_accel import _pykernels, kernels
from inclusion_accel.problems import (
    make_bilinear,
    make_monotone_linear,
    make_rotation_family,
    random_monotone_matrix,
)
from inclusion_accel.solvers import _kernel_spec


def cases(rng):
    b = make_bilinear([[1.0]])
    yield "EAG bilinear 2D", "eag_trace", b, (1 / 3, 0.0)
    box = make_bilinear(np.eye(2), ("box", -1, 1))
    yield "EAG bilinear box 4D", "eag_trace", box, (1 / 3, 0.0)
    r = make_rotation_family(-0.2, 1.0)
    yield "AS rotation 2D", "as_trace", r, (0.5 * (-2 * r.rho + 1 / r.L), r.rho)
    m = make_monotone_linear(random_monotone_matrix(20, rng), ("ball", 1.0))
    yield "EG linear ball 20D", "eg_trace", m, (0.5 / m.L,)


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'case':<24}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}{'max |diff|':>12}")
    for label, fn, p, params in cases(rng):
        kind, a, b, s = _kernel_spec(p.A)
        z0 = p.default_start()
        argv = (p.F.matrix, z0, params[0], *params[1:], args.iters, 0.0, kind, a, b, s)
        fast = getattr(kernels.compiled, fn)
        slow = getattr(_pykernels, fn)
        tc = best_of(lambda: fast(*argv), args.repeat)
        tp = best_of(lambda: slow(*argv), max(1, args.repeat // 2))
        diff = float(np.abs(fast(*argv)[0] - slow(*argv)[0]).max())
        print(f"{label:<24}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
