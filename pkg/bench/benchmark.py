"""Compiled kernels against the numpy fallback: equal outputs, wall-clock ratio.

Usage: python3 bench/benchmark.py [--quick]
"""
import argparse
import time

import numpy as np

from rwre_lab import abp, backend, rng
from rwre_lab.environment import UNIFORM_AXIS, cumulative_rows, sample_iid
from rwre_lab.lattice import Cylinder
from rwre_lab.walk import exit_sample_batch


def timed(fn, repeat=1):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def same(a, b) -> bool:
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def cases(quick: bool):
    n_walk = 20_000 if quick else 200_000
    env = sample_iid(UNIFORM_AXIS, 12, 3, 2)
    cyl = Cylinder(8, (0, 0), 0)
    yield "exit walks R=8", n_walk, lambda k: exit_sample_batch(env, (0, 0, 0), cyl, 11, n_walk, kern=k)

    n_vis, horizon = (50, 20_000) if quick else (200, 100_000)
    cum = cumulative_rows(np.full((1, 6), 1 / 6))[0]
    keys = rng.stream_keys(5, 0, n_vis)
    cps = np.array([horizon // 10, horizon], dtype=np.int64)
    yield "visit counts d=3", n_vis * horizon, lambda k: k.visit_counts(3, 0, 0, keys, cps, 10 ** 6, cum)

    field = abp.random_admissible_field(6, 2, 4)
    yield "contact set R=6", 1, lambda k: [(c.y, c.s, c.volume) for c in abp.upper_contact_set(field, kern=k)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    py = backend.get("python")
    try:
        cy = backend.get("cython")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return
    print(f"{'kernel':<20}{'python s':>12}{'cython s':>12}{'speedup':>10}  equal")
    for name, _, run in cases(args.quick):
        tp, op = timed(lambda: run(py))
        tc, oc = timed(lambda: run(cy), repeat=3)
        print(f"{name:<20}{tp:>12.3f}{tc:>12.4f}{tp / tc:>10.1f}  {same(op, oc)}")


if __name__ == "__main__":
    main()
