"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is called once before timing so compilation is excluded.  The
best of ``--repeat`` runs is reported.
"""
import argparse
import time

import numpy as np

from placekit import kernels


def _rects(rng, n, spread=30.0):
    return np.column_stack([
        rng.uniform(-spread, spread, n), rng.uniform(0, 2 * spread, n),
        rng.uniform(0.5, 2.5, n), rng.uniform(0.5, 1.2, n), rng.uniform(-np.pi, np.pi, n),
    ])


def _cases(rng):
    ra, rb = _rects(rng, 200), _rects(rng, 200)
    locs = rng.uniform(-30, 30, size=(20_000, 3))
    thetas = rng.uniform(-np.pi, np.pi, 20_000)
    n = 200_000
    dep = (rng.uniform(-30, 30, n), rng.uniform(0, 70, n), rng.uniform(-4, 4, n),
           rng.uniform(1, 4, (n, 3)), rng.uniform(1.4, 1.8, n))

    def grid():
        return (np.zeros((140, 120)), np.zeros((140, 120, 36)), np.zeros((140, 120, 3)),
                np.zeros((140, 120, 3)), np.zeros((140, 120)))

    return {
        "iou_matrix 200x200": lambda be: be.iou_matrix(ra, rb),
        "overlaps_any 200 vs 200": lambda be: [be.overlaps_any(r, rb) for r in ra],
        "neighbor_mask 20k": lambda be: be.neighbor_mask(locs[0], 0.1, locs, thetas, 10.0, 0.26),
        "deposit 200k": lambda be: be.deposit(*grid(), *dep, -30.0, 0.0, 0.5),
    }


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = [kernels.NUMPY] + ([kernels.NUMBA] if kernels.NUMBA is not None else [])
    cases = _cases(np.random.default_rng(args.seed))
    print(f"{'kernel':<26}" + "".join(f"{b.name:>12}" for b in backends) + f"{'speedup':>10}")
    for name, case in cases.items():
        t = [best_of(lambda: case(b), args.repeat) for b in backends]
        row = f"{name:<26}" + "".join(f"{v * 1e3:>10.2f}ms" for v in t)
        if len(t) == 2:
            row += f"{t[0] / t[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
