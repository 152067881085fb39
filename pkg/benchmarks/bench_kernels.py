#!/usr/bin/env python3
"""Compare the compiled and pure-Python sandpile kernels.

Runs the same corner-driven pile on both backends, checks the results are
bit-identical, and reports throughput.  The pure-Python backend exists for
portability and cross-checking; this shows what the compiled core buys.

    python benchmarks/bench_kernels.py [--side 64] [--steps 2000]
"""

import argparse
import time

import numpy as np

from sandlab import available_backends
from sandlab.experiments import corner_drain_boundaries
from sandlab.rng import SplitMix64
from sandlab.sandpile import DriveSpec, new_lattice, run


def bench(backend: str, side: int, warmup: int, steps: int, seed: int):
    lat = new_lattice(side, 4, corner_drain_boundaries(), backend=backend)
    spec = DriveSpec(grains_per_event=4, site_policy="corner")
    rng = SplitMix64(seed)
    run(lat, spec, rng, warmup)
    t0 = time.perf_counter()
    out = run(lat, spec, rng, steps)
    elapsed = time.perf_counter() - t0
    topplings = int(out.records.size_s.sum())
    return elapsed, topplings, lat.heights.copy(), lat.ledger


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--warmup", type=int, default=None,
                    help="fill steps before timing (default 2*side^2)")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    warmup = args.warmup if args.warmup is not None else 2 * args.side ** 2

    backends = available_backends()
    print(f"side={args.side} warmup={warmup} steps={args.steps} "
          f"backends={backends}")
    rows = {}
    for backend in backends:
        elapsed, topplings, heights, ledger = bench(
            backend, args.side, warmup, args.steps, args.seed)
        rows[backend] = (elapsed, topplings, heights, ledger)
        print(f"{backend:>9}: {elapsed:8.3f}s  "
              f"{args.steps / elapsed:10,.0f} steps/s  "
              f"{topplings / elapsed:12,.0f} topplings/s")

    if len(rows) == 2:
        (e1, t1, h1, l1) = rows["compiled"]
        (e2, t2, h2, l2) = rows["python"]
        assert t1 == t2 and np.array_equal(h1, h2) and l1 == l2, \
            "backends disagree"
        print(f"results bit-identical; speedup {e2 / e1:,.1f}x")


if __name__ == "__main__":
    main()
