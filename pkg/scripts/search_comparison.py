#!/usr/bin/env python3
"""Mean best reward of BoN, SLG (tail and mean selection) across budgets on the two-level benchmark."""

import argparse
import math

import numpy as np

from tailbon.dists import HierarchicalGaussian, SyntheticSampler
from tailbon.rng import stream
from tailbon.search import SLGConfig, run_bon, run_slg, schedule

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--trials", type=int, default=500)
ap.add_argument("--t", type=float, default=1.0, help="within-state / between-state spread ratio")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

dist = HierarchicalGaussian(0.0, 1.0, args.t)
runners = {
    "bon": lambda s, N: run_bon(s, N),
    "slg_tail": lambda s, N: run_slg(s, N, SLGConfig(selector="tail")),
    "slg_mean": lambda s, N: run_slg(s, N, SLGConfig(selector="mean")),
}
print(f"{'N':>6} {'m':>4} {'K':>3}  " + "  ".join(f"{k:>16}" for k in runners))
for N in (128, 256, 512, 1024, 2048, 4096):
    cells = []
    for name, run in runners.items():
        sampler = SyntheticSampler(dist, stream(args.seed, name, N))
        best = np.array([run(sampler, N).best_reward for _ in range(args.trials)])
        cells.append(f"{best.mean():8.3f} +- {best.std(ddof=1) / math.sqrt(best.size):.3f}")
    sch = schedule(N)
    print(f"{N:>6} {sch.m:>4} {sch.K:>3}  " + "  ".join(f"{c:>16}" for c in cells))
