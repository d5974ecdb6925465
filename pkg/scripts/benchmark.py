#!/usr/bin/env python3
"""Five-model synthetic benchmark (512/64/64 crystals per seed).

Prints per-seed test RMSE and probe Fermi RMSE, the medians, and the
ordering checks; writes everything to --out as JSON.
"""

import argparse
import json
import logging

from dos_transformer.experiments import BENCHMARK_MODELS, BenchmarkConfig, medians, ordering_checks, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="benchmark.json")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    cfg = BenchmarkConfig()
    runs = []
    for seed in args.seeds:
        runs.append(run_benchmark(seed, cfg))
        print(f"seed {seed}: " + "  ".join(
            f"{name} {runs[-1][name]['rmse']:.4f}/{runs[-1][name]['fermi_rmse']:.3f}"
            for name, _, _ in BENCHMARK_MODELS), flush=True)
    summary = {"config": cfg.to_dict(), "runs": runs,
               "median_rmse": medians(runs, "rmse"), "median_fermi_rmse": medians(runs, "fermi_rmse"),
               "checks": ordering_checks(runs)}
    with open(args.out, "w") as fh:
        json.dump(summary, fh, indent=2, default=str)
    print("median rmse", json.dumps(summary["median_rmse"]))
    print("median fermi", json.dumps(summary["median_fermi_rmse"]))
    for name, ok in summary["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")


if __name__ == "__main__":
    main()
