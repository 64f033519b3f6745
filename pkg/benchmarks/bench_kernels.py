"""Compare the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from twopass import kernels
from twopass.kernels import _pykernels


def cases(seed: int = 0):
    rng = np.random.default_rng(seed)
    T, U = 40, 12
    blank = np.log(rng.uniform(0.05, 0.95, (T, U + 1)))
    label = np.log(rng.uniform(0.05, 0.95, (T, U)))
    a = rng.integers(0, 20, 60).tolist()
    b = rng.integers(0, 20, 55).tolist()
    return (blank, label), (a, b)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args(argv)
    lattice_args, edit_args = cases()
    backends = {"python": _pykernels}
    if kernels.BACKEND == "cython":
        backends["cython"] = kernels
    else:
        print("compiled extension unavailable; timing the fallback only")
    results = {}
    for name, mod in backends.items():
        for fn, fargs in (("rnnt_lattice", lattice_args), ("edit_distance", edit_args)):
            call = getattr(mod, fn)
            sec = min(timeit.repeat(lambda: call(*fargs), number=args.repeat, repeat=3))
            results[(name, fn)] = sec / args.repeat
            print(f"{name:7s} {fn:14s} {1e6 * results[(name, fn)]:10.1f} us/call")
    if "cython" in backends:
        for fn in ("rnnt_lattice", "edit_distance"):
            print(f"speedup {fn:14s} {results[('python', fn)] / results[('cython', fn)]:8.1f}x")


if __name__ == "__main__":
    main()
