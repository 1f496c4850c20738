"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--points 65536]

Compilation is triggered once before timing. Results are checked for
agreement before any timing is reported.
"""
import argparse
import timeit

import numpy as np

from hwmap import kernels


def cases(points, rng):
    a = rng.standard_normal((points, 3))
    b = rng.standard_normal((points, 3))
    mats = rng.standard_normal((points, 3, 3)) + 3 * np.eye(3)
    side = 64
    idx = np.stack(np.meshgrid(np.arange(side), indexing="ij"), axis=-1).reshape(-1, 1)
    m = rng.standard_normal((side, side)) + 0j
    ua = rng.standard_normal(side) + 1j * rng.standard_normal(side)
    vb = rng.standard_normal(side) + 1j * rng.standard_normal(side)
    return {
        "inverse3": (lambda f: f(mats)),
        "wedge_apply": (lambda f: f(a, b, mats)),
        "pair_scatter": (lambda f: f(np.zeros(side, complex), idx, idx, side, m, ua, vb)),
    }


def _first(x):
    return x[0] if isinstance(x, tuple) else x


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--points", type=int, default=65536)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, call in cases(args.points, rng).items():
        fj = getattr(kernels, f"{name}_jit")
        fn = getattr(kernels, f"{name}_numpy")
        rj, rn = _first(call(fj)), _first(call(fn))
        if not np.allclose(rj, rn, rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        tj = min(timeit.repeat(lambda: call(fj), number=1, repeat=args.repeat)) * 1e3
        tn = min(timeit.repeat(lambda: call(fn), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<14}{tj:>12.3f}{tn:>12.3f}{tn / tj:>10.2f}")


if __name__ == "__main__":
    main()
