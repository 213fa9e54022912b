"""Exhaustive code search: compiled kernel vs numpy fallback.

    python3 benchmarks/bench_codesearch.py [--sizes 12 14 16 18] [--nlambda 64] [--repeat 3]
"""
import argparse
import time

from hsikrylov import aperture as ap
from hsikrylov import _codesearch_py
from hsikrylov._backend import compiled_impl


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[12, 14, 16, 18])
    p.add_argument("--nlambda", type=int, default=64)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if compiled_impl is None:
        print("compiled kernel not available; only the numpy fallback will run")
    print(f"{'N':>3} {'python s':>10} {'cython s':>10} {'speedup':>8}  same code")
    for n in args.sizes:
        tp, (cp, _) = best_time(lambda: ap.search_code_exhaustive(
            n, args.nlambda, args.alpha, backend=_codesearch_py), args.repeat)
        if compiled_impl is None:
            print(f"{n:>3} {tp:>10.4f} {'-':>10} {'-':>8}  -")
            continue
        tc, (cc, _) = best_time(lambda: ap.search_code_exhaustive(
            n, args.nlambda, args.alpha, backend=compiled_impl), args.repeat)
        print(f"{n:>3} {tp:>10.4f} {tc:>10.4f} {tp / tc:>8.1f}  {cp == cc}")


if __name__ == "__main__":
    main()
