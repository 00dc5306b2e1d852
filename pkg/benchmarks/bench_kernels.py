"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints per-call microseconds for each backend and the speed-up.  The two
backends are also checked against each other on the same inputs.
"""

import argparse
import timeit

import numpy as np

from ejcbf.backend import available
from ejcbf.dynamics import RobotParams


def cases(p, rng):
    s = rng.normal(size=8)
    x = rng.normal(size=8)
    u = rng.normal(size=2)
    return {
        "plant_rhs": lambda k: k.plant_rhs(p, s, u),
        "rk4_hold (10 substeps)": lambda k: k.rk4_hold(p, s, u, 0.01, 10),
        "mc_derivs": lambda k: k.mc_derivs(p, x),
        "flat_observe": lambda k: k.flat_observe(p, s),
        "f_and_g": lambda k: k.f_and_g(p, x),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    backends = available()
    p = RobotParams().packed
    rng = np.random.default_rng(0)
    if "cython" not in backends:
        print("compiled extension not built; timing the Python backend only")
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in backends) + "     speed-up")
    for name, call in cases(p, rng).items():
        times = {b: timeit.timeit(lambda: call(k), number=args.repeat) / args.repeat * 1e6
                 for b, k in backends.items()}
        line = f"{name:<24}" + "".join(f"{times[b]:>10.2f}us" for b in backends)
        if "cython" in times:
            ref, got = call(backends["python"]), call(backends["cython"])
            ref = np.concatenate([np.ravel(a) for a in (ref if isinstance(ref, tuple) else (ref,))])
            got = np.concatenate([np.ravel(a) for a in (got if isinstance(got, tuple) else (got,))])
            err = np.max(np.abs(ref - got) / (1 + np.abs(ref)))
            line += f"  {times['python'] / times['cython']:>8.1f}x  (max rel diff {err:.1e})"
        print(line)


if __name__ == "__main__":
    main()
