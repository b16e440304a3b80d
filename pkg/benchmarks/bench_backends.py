"""Wall-clock comparison of the numba kernels against the numpy fallbacks.

    python3 benchmarks/bench_backends.py [--paths N] [--repeat R] [--only mc,volterra,fpe,correction]

The first numba call of each kernel is run once untimed so JIT compilation
is not counted.
"""

import argparse
import time

from ifdensity import _backend
from ifdensity import firstpassage as fp
from ifdensity import fpe, mc
from ifdensity import subdensity as sd
from ifdensity.kernel import Grid1D, TimeGrid


def cases(n_paths):
    grid = Grid1D(6.0, 1.0 / 400)
    fine = TimeGrid(2.0, 1e-4)
    m = fp.solve_M(TimeGrid(2.0, 1e-3))
    return {
        "mc": lambda: mc.simulate_ensemble(mc.PathConfig(2.0, 1e-3, seed=1, n_paths=n_paths)),
        "volterra": lambda: fp.solve_M(fine),
        "fpe": lambda: fpe.solve(None, 2.0, 1e-4, grid),
        "correction": lambda: sd.f0_from_representation(grid, TimeGrid(2.0, 0.1), m),
    }


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--only", default="mc,volterra,fpe,correction")
    args = p.parse_args(argv)
    if not _backend.HAS_NUMBA:
        raise SystemExit("numba is not available; nothing to compare")
    table = cases(args.paths)
    names = [n.strip() for n in args.only.split(",") if n.strip()]
    print(f"{'kernel':<12}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name in names:
        fn = table[name]
        _backend.set_backend("numba")
        fn()
        t_nb = timeit(fn, args.repeat)
        _backend.set_backend("numpy")
        t_np = timeit(fn, args.repeat)
        print(f"{name:<12}{t_nb:>12.3f}{t_np:>12.3f}{t_np / t_nb:>10.1f}")
    _backend.set_backend("numba")


if __name__ == "__main__":
    main()
