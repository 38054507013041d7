#!/usr/bin/env python3
"""Run every named experiment, write CSV/JSON plus plot data, print a verdict table."""

import argparse
import sys
import time
from pathlib import Path

from tailbon.experiments import EXPERIMENTS, ExperimentSpec, run_experiment
from tailbon.plots import emit_plot_data


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--svg", action="store_true")
    ap.add_argument("names", nargs="*", default=sorted(EXPERIMENTS))
    args = ap.parse_args()

    failed = 0
    for name in args.names:
        t0 = time.perf_counter()
        report = run_experiment(ExperimentSpec(name, seed=args.seed, out=args.out, jobs=args.jobs))
        emit_plot_data(report, Path(args.out) / "plots", svg=args.svg)
        failed += not report.passed
        print(f"{name:16s} {'pass' if report.passed else 'FAIL'}  {time.perf_counter() - t0:6.1f}s")
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
