"""Time windowed CRF inference with the numba kernels against the numpy fallback.

    python3 benchmarks/bench_crf.py --height 610 --width 340 --classes 9 --k 7

Both backends run on the same random input; the script reports the best of
``--repeat`` timings for each and the largest marginal difference between them.
With DMLCRF_DISABLE_NUMBA=1 (or without numba installed) only the numpy
column is timed.
"""

import argparse
import sys
import time

import numpy as np

from dmlcrf import _accel
from dmlcrf.crf import CrfParams, build_windows, infer


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--height", type=int, default=305)
    ap.add_argument("--width", type=int, default=170)
    ap.add_argument("--classes", type=int, default=9)
    ap.add_argument("--features", type=int, default=32)
    ap.add_argument("--k", type=int, default=7)
    ap.add_argument("--iterations", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    prob = rng.dirichlet(np.ones(args.classes), size=(args.height, args.width))
    feats = rng.standard_normal((args.height, args.width, args.features))
    params = CrfParams(filter_size=args.k, iterations=args.iterations)

    backends = [("numpy", False)]
    if _accel.USE_NUMBA:
        backends.insert(0, ("numba", True))
        infer(prob[:8, :8], feats[:8, :8], params, use_numba=True)  # JIT compile / cache load
    else:
        print("numba unavailable or disabled; timing numpy only")

    print(f"input {args.height}x{args.width}, C={args.classes}, F={args.features}, k={args.k}, "
          f"{args.iterations} iterations, best of {args.repeat}")
    results = {}
    for name, flag in backends:
        t_win, _ = best_of(lambda: build_windows(feats, params, use_numba=flag), args.repeat)
        t_all, (_, q) = best_of(lambda: infer(prob, feats, params, use_numba=flag), args.repeat)
        results[name] = (t_all, q)
        print(f"{name:>6}: windows {t_win:8.3f}s   full inference {t_all:8.3f}s")

    if len(results) == 2:
        (t_nb, q_nb), (t_np, q_np) = results["numba"], results["numpy"]
        print(f"speedup {t_np / t_nb:.1f}x, max |marginal difference| {np.abs(q_nb - q_np).max():.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
