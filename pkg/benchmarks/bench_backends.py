"""Wall-clock comparison of the compiled kernel and the pure-Python trial loop.

    python benchmarks/bench_backends.py --replications 40

Both backends consume identical random streams, so the script also checks that
every replication agrees exactly before reporting timings.
"""
from __future__ import annotations

import argparse
import sys
import time

from seqcara import HAVE_COMPILED, paper_scenario
from seqcara.engine import run_replications, with_delta

CASES = {
    "m0=5 T0=0.5 eta=0": paper_scenario(5, 0.5, 0.0),
    "m0=10 T0=1 eta=1": paper_scenario(10, 1.0, 1.0),
    "m0=15 T0=1 eta=1 vary": paper_scenario(15, 1.0, 1.0, True, True),
    "m0=10 T0=1 eta=1 delta=0.1": with_delta(paper_scenario(10, 1.0, 1.0), 0.1),
}


def timed(scenario, reps, seed, backend):
    start = time.perf_counter()
    out = run_replications(scenario, 0, range(reps), seed, backend)
    return time.perf_counter() - start, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replications", type=int, default=40)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    if not HAVE_COMPILED:
        print("compiled kernel not built; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'scenario':<28}{'mean tau':>9}{'python s':>10}{'compiled s':>12}{'speedup':>9}")
    for name, sc in CASES.items():
        t_py, py = timed(sc, args.replications, args.seed, "python")
        t_c, cc = timed(sc, args.replications, args.seed, "compiled")
        if not all(a.same_outcome(b) for a, b in zip(py, cc)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 2
        tau = sum(r.tau for r in cc) / len(cc)
        print(f"{name:<28}{tau:>9.1f}{t_py:>10.3f}{t_c:>12.4f}{t_py / t_c:>8.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
