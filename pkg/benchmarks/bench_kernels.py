"""Time the numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--paths 200000] [--repeat 3]

Each kernel is run once per backend to warm up (numba compiles on first
call), then timed ``--repeat`` times; the best time is reported. Results
from both backends are compared so the table also shows that they agree.
"""
import argparse
import time

import numpy as np

from macscale import MacModel
from macscale import _accel
from macscale import _kernels as K
from macscale.fundamental import killed_blocks
from macscale.oracle import PathConfig, StripReflected, StripSpec, simulate


def model_a():
    return MacModel([[.4, .1], [.2, .3]],
                    [[[.1, .05], [.05, .1]], [[.2, .15], [.1, .25]]])


def slow_model():
    # drift close to zero so the fixed point needs many sweeps
    return MacModel([[.24, .2], [.2, .24]],
                    [[[.05, .05], [.05, .05]], [[.25, .21], [.21, .25]]])


def best_of(fn, repeat):
    fn()
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    A = model_a()
    S = slow_model()
    cases = {
        "fixed point (slow model)": lambda: K.neuts_iteration(killed_blocks(S), 1e-13, 1_000_000)[0],
        "scale recursion n=300": lambda: K.w_recursion(killed_blocks(A), np.linalg.inv(A.a_up), 300)[0],
        f"strip MC {args.paths} paths": lambda: simulate(
            A, PathConfig(n_paths=args.paths, seed=1), StripSpec(-5, 5)).mean,
        f"reflection MC {args.paths} paths": lambda: simulate(
            A, PathConfig(n_paths=args.paths, seed=1), StripReflected(3, 0.7)).mean,
    }
    backends = ["numba", "numpy"] if _accel.HAVE_NUMBA else ["numpy"]
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}  agree")
    for name, fn in cases.items():
        times, outs = [], []
        for b in backends:
            _accel.set_backend(b)
            t, out = best_of(fn, args.repeat)
            times.append(t)
            outs.append(out)
        speed = times[-1] / times[0] if len(times) == 2 else 1.0
        agree = all(np.array_equal(outs[0], o) or np.allclose(outs[0], o, rtol=1e-12, atol=1e-14)
                    for o in outs[1:])
        print(f"{name:34s}" + "".join(f"{t:12.4f}" for t in times) + f"{speed:10.1f}  {agree}")
    _accel.set_backend(backends[0])


if __name__ == "__main__":
    main()
