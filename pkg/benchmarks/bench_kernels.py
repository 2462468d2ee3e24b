"""Time the numba and pure-numpy flavours of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

Both flavours live side by side in ``attnlab._kernels``, so one process can
time them; the environment flag ``ATTNLAB_DISABLE_NUMBA`` only chooses which
one the library dispatches to. The first numba call (compilation, or loading
the on-disk cache) is excluded from the timings.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from attnlab import _kernels as K


def _time(fn, repeat):
    fn()  # warm up / compile
    times = timeit.repeat(fn, number=1, repeat=repeat)
    return min(times)


def cases(quick: bool):
    rng = np.random.default_rng(0)
    sizes = (32, 64) if quick else (32, 64, 128, 256)
    for n in sizes:
        a = rng.standard_normal((n, n))
        yield f"jacobi_svd {n}x{n}", (
            lambda a=a: K.jacobi_svd_loops(a, K.JACOBI_MAX_SWEEPS, 1e-15),
            lambda a=a: K.jacobi_svd_numpy(a, K.JACOBI_MAX_SWEEPS, 1e-15),
        )
    for m, n in ((64, 64), (128, 512)) if quick else ((64, 64), (128, 512), (512, 512)):
        w = rng.standard_normal((m, n))
        u = rng.standard_normal(m)
        v = rng.standard_normal(n)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        yield f"power_iterate {m}x{n} x100", (
            lambda w=w, u=u, v=v: K.power_iterate_loops(w, u, v, 100, 0.0, K.ZERO_GUARD),
            lambda w=w, u=u, v=v: K.power_iterate_numpy(w, u, v, 100, 0.0, K.ZERO_GUARD),
        )
    for rows, t in ((4096, 16), (65536, 32)) if not quick else ((4096, 16),):
        x = rng.standard_normal((rows, t)) * 3
        yield f"softmax_entropy_rows {rows}x{t}", (
            lambda x=x: K.softmax_entropy_rows_loops(x),
            lambda x=x: K.softmax_entropy_rows_numpy(x),
        )


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small sizes only")
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy flavour exists")
        return 1
    print(f"{'kernel':<34}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, (fast, slow) in cases(args.quick):
        tf = _time(fast, args.repeat) * 1e3
        ts = _time(slow, args.repeat) * 1e3
        print(f"{name:<34}{tf:>12.3f}{ts:>12.3f}{ts / tf:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
