"""Benchmark the compiled engine kernel against the pure-Python backend.

Runs the same workloads through both backends, checks the traces are
bit-identical, and reports wall times.  Usage:

    python benchmarks/bench_backends.py [--count 2000] [--rate 5.0] [--repeat 3]
"""

import argparse
import time

from servesim.engine import EngineConfig, available_backends, run
from servesim.schedulers import ChunkedPrefill, DecodePrepone, VllmLike
from servesim.workload import LogNormalInt, Synthetic, WorkloadConfig, generate


def time_backend(workload, engine, scheduler, backend, repeat):
    best = float("inf")
    trace = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        trace = run(workload, engine, scheduler, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, trace


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=2000)
    parser.add_argument("--rate", type=float, default=5.0)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    if "compiled" not in available_backends():
        raise SystemExit("compiled backend not built; reinstall with Cython")

    engine = EngineConfig()
    workload = generate(WorkloadConfig(
        args.rate, args.count, args.seed,
        Synthetic(LogNormalInt(220, 0.6), LogNormalInt(180, 0.7))))
    tokens = sum(s.output_len for s in workload)
    print(f"workload: {args.count} requests, {tokens} output tokens, "
          f"rate {args.rate:g} req/s")
    print(f"{'scheduler':<16} {'python':>10} {'compiled':>10} {'speedup':>8}"
          f" {'iters':>8}")

    for scheduler in (VllmLike(), ChunkedPrefill(chunk_tokens=256),
                      DecodePrepone(n=4)):
        t_py, trace_py = time_backend(workload, engine, scheduler,
                                      "python", args.repeat)
        t_cy, trace_cy = time_backend(workload, engine, scheduler,
                                      "compiled", args.repeat)
        assert trace_py.requests == trace_cy.requests, "backend divergence"
        assert trace_py.iterations == trace_cy.iterations, "backend divergence"
        name = type(scheduler).__name__
        print(f"{name:<16} {t_py:>9.3f}s {t_cy:>9.3f}s {t_py / t_cy:>7.1f}x"
              f" {len(trace_py.iterations):>8}")


if __name__ == "__main__":
    main()
