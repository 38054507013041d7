#!/usr/bin/env python3
"""Fit a tail from m pilot rewards and compare the extrapolated best-of-N curve with the truth."""

import argparse

import numpy as np

from tailbon.dists import GaussianTailMixture, mc_value, sample_rewards
from tailbon.rng import stream
from tailbon.tail_fit import fit_tail, scaling_curve

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--m", type=int, default=1000, help="pilot sample size")
ap.add_argument("--alpha", type=float, default=0.2)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

dist = GaussianTailMixture(alpha=args.alpha)
fit = fit_tail(sample_rewards(dist, args.m, stream(args.seed, "pilot")), args.alpha)
print(f"mu_hat={fit.mu_hat:.4f}  sigma_hat={fit.sigma_hat:.4f}  (true tail: mu={dist.mu}, sigma={dist.sigma})")
print(f"{'N':>8} {'predicted':>10} {'true':>10} {'se':>8}")
budgets = [1, 10, 100, 1000, 10_000, 100_000]
for n, v in scaling_curve(fit, budgets).points:
    truth, se = mc_value(dist, n, 50_000, stream(args.seed, "truth", n))
    print(f"{n:>8} {v:>10.4f} {truth:>10.4f} {se:>8.4f}")
# small N sits in the body, where the tail model is not meant to hold
print("note: predictions are only claimed for N large enough that the max lands in the tail;",
      f"P(max of N below the tail) = (1 - alpha/2)^N, e.g. {np.power(1 - args.alpha / 2, 10):.2f} at N=10")
