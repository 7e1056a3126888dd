"""Timing comparison of the numba and numpy kernel backends.

Run as a script:

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly (bypassing the IFSLAB_BACKEND
switch), results are checked bitwise equal, and the best-of-N wall time
is reported per kernel.  The numba path pays a one-off JIT compile that
is excluded by a warmup call.
"""

import argparse
import time

import numpy as np

from ifslab._kernels import numpy_impl

try:
    from ifslab._kernels import numba_impl
except ImportError:
    numba_impl = None


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _case_uniforms():
    idx = np.arange(1 << 20, dtype=np.uint64)
    return "uniforms 1M", (lambda m: (lambda: m.uniforms(42, 1, idx, 3)))


def _case_endpoints():
    a = np.array([0.5, 0.5])
    b = np.array([0.0, 0.5])
    cp = np.array([0.5, 1.0])
    return (
        "chain endpoints 200k x 60",
        (lambda m: (lambda: m.chain_endpoints(a, b, cp, 0.0, 200000, 60, 7, 1))),
    )


def _case_trajectories():
    a = np.array([0.5, 0.5])
    b = np.array([0.0, 0.5])
    cp = np.array([0.5, 1.0])
    return (
        "chain trajectories 2k x 500",
        (lambda m: (lambda: m.chain_trajectories(a, b, cp, 0.0, 2000, 500, 7, 1))),
    )


def _case_monotone():
    rng = np.random.default_rng(0)
    n = 100000
    x0 = np.sort(rng.normal(size=n))
    x1 = np.sort(rng.normal(size=n))
    w = np.full(n, 1.0 / n)
    return (
        "monotone plan 100k atoms",
        (lambda m: (lambda: m.monotone_plan(x0, w, x1, w, 2.0))),
    )


def _case_flow():
    rng = np.random.default_rng(1)
    n = 150
    w0 = rng.random(n)
    w0 /= w0.sum()
    w1 = rng.random(n)
    w1 /= w1.sum()
    C = np.abs(rng.normal(size=(n, n))) ** 0.5
    return "ssp flow 150x150", (lambda m: (lambda: m.ssp_flow(w0, w1, C)))


CASES = [_case_uniforms, _case_endpoints, _case_trajectories, _case_monotone,
         _case_flow]


def _agree(r_np, r_nb):
    # sampling output and transport plans must match bitwise; summed cost
    # scalars may differ in the last ulp (summation order), so those get
    # a 1e-12 relative tolerance
    if not isinstance(r_np, tuple):
        return np.array_equal(r_np, r_nb)
    ok = True
    for x, y in zip(r_np, r_nb):
        x = np.asarray(x)
        y = np.asarray(y)
        if x.shape != y.shape:
            return False
        if x.size > 1 or x.dtype.kind in "iu":
            ok = ok and np.array_equal(x, y)
        else:
            ok = ok and bool(np.allclose(x, y, rtol=1e-12, atol=0.0))
    return ok


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if numba_impl is None:
        print("numba backend unavailable; timing numpy only")

    print("%-28s %12s %12s %9s" % ("kernel", "numpy [ms]", "numba [ms]", "speedup"))
    for case in CASES:
        name, make = case()
        f_np = make(numpy_impl)
        t_np = _best_of(f_np, args.repeat)
        if numba_impl is None:
            print("%-28s %12.2f %12s %9s" % (name, t_np * 1e3, "-", "-"))
            continue
        f_nb = make(numba_impl)
        f_nb()  # JIT warmup, excluded from timing
        t_nb = _best_of(f_nb, args.repeat)
        tag = "" if _agree(f_np(), f_nb()) else "   MISMATCH"
        print("%-28s %12.2f %12.2f %8.1fx%s"
              % (name, t_np * 1e3, t_nb * 1e3, t_np / t_nb, tag))


if __name__ == "__main__":
    main()
