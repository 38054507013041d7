"""Splitting a sampling budget across prompts.

Each prompt i is summarized by a tail fit; giving it n_i samples is worth
``w_i * (mu_i + sigma_i * E(n_i))``. The objective is separable and each
term is concave in n_i, so handing out units one at a time to the largest
marginal gain is exactly optimal.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .gauss import Method, expected_max
from .tail_fit import DEFAULT_ALPHA, MIN_TAIL, InsufficientTailError, TailFit, fit_tail, min_batch_size

BRUTE_FORCE_MAX_K = 4
BRUTE_FORCE_MAX_N = 60


class InfeasibleAllocationError(ValueError):
    pass


@dataclass(frozen=True)
class AllocationProblem:
    fits: tuple[TailFit, ...]
    weights: tuple[float, ...]
    n_total: int

    def __post_init__(self):
        object.__setattr__(self, "fits", tuple(self.fits))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.fits or len(self.fits) != len(self.weights):
            raise ValueError("need one weight per fit and at least one prompt")
        if any(w <= 0 for w in self.weights):
            raise ValueError("weights must be positive")
        if self.n_total < len(self.fits):
            raise InfeasibleAllocationError(
                f"n_total = {self.n_total} cannot give each of {len(self.fits)} prompts one sample"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "AllocationProblem":
        prompts = data["prompts"]
        return cls(
            fits=tuple(TailFit.from_dict(p["fit"]) for p in prompts),
            weights=tuple(float(p.get("weight", 1.0)) for p in prompts),
            n_total=int(data["n_total"]),
        )

    def to_dict(self) -> dict:
        return {"prompts": [{"fit": f.to_dict(), "weight": w} for f, w in zip(self.fits, self.weights)],
                "n_total": self.n_total}


@dataclass(frozen=True)
class AllocationResult:
    counts: tuple[int, ...]
    objective: float

    def to_dict(self) -> dict:
        return {"counts": list(self.counts), "objective": self.objective}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def objective(problem: AllocationProblem, counts: Sequence[int], method: Method = "quadrature") -> float:
    e = expected_max(np.asarray(counts), method)
    return float(sum(w * (f.mu_hat + f.sigma_hat * ei) for f, w, ei in zip(problem.fits, problem.weights, e)))


def allocate(problem: AllocationProblem, method: Optional[Method] = None) -> AllocationResult:
    """Greedy marginal-gain solution of the integer allocation problem.

    Every prompt starts at one sample; each further unit goes to the prompt
    with the largest ``w_i * sigma_i * (E(n_i + 1) - E(n_i))``, ties to the
    lowest index. Quadrature E(N) is used up to 10^6 total samples and the
    asymptotic form beyond, unless ``method`` is given.
    """
    if method is None:
        method = "quadrature" if problem.n_total <= 1_000_000 else "asymptotic"
    k = len(problem.fits)
    slopes = [w * f.sigma_hat for f, w in zip(problem.fits, problem.weights)]
    top = problem.n_total - k + 2
    ns = np.arange(1, top + 1)
    # the asymptotic form is closed, so skip the memo table for huge budgets
    table = np.sqrt(2.0 * np.log(ns)) if method == "asymptotic" else expected_max(ns, method)

    def gain(i: int, n: int) -> float:
        return slopes[i] * (table[n] - table[n - 1])

    counts = [1] * k
    heap = [(-gain(i, 1), i) for i in range(k)]
    heapq.heapify(heap)
    for _ in range(problem.n_total - k):
        _, i = heapq.heappop(heap)
        counts[i] += 1
        heapq.heappush(heap, (-gain(i, counts[i]), i))
    return AllocationResult(tuple(counts), objective(problem, counts, method))


def _compositions(n: int, k: int):
    """Compositions of n into k positive parts, in lexicographic order."""
    for cuts in itertools.combinations(range(1, n), k - 1):
        edges = (0, *cuts, n)
        yield tuple(b - a for a, b in zip(edges, edges[1:]))


def brute_force_allocate(problem: AllocationProblem) -> AllocationResult:
    """Exhaustive search over every composition; small instances only."""
    k, n = len(problem.fits), problem.n_total
    if k > BRUTE_FORCE_MAX_K or n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force is limited to K <= {BRUTE_FORCE_MAX_K} and n_total <= {BRUTE_FORCE_MAX_N}")
    table = expected_max(np.arange(1, n + 1))
    mus = np.array([f.mu_hat for f in problem.fits])
    sigmas = np.array([f.sigma_hat for f in problem.fits])
    w = np.array(problem.weights)
    comps = np.array(list(_compositions(n, k)), dtype=int).reshape(-1, k)
    vals = (w * (mus + sigmas * table[comps - 1])).sum(axis=1)
    # argmax returns the first maximum, i.e. the lexicographically smallest tie
    best = tuple(int(c) for c in comps[int(np.argmax(vals))])
    return AllocationResult(best, objective(problem, best))


def fit_pilots(samplers: Sequence, n_pilot: int, alpha: float = DEFAULT_ALPHA, *,
               min_tail: int = MIN_TAIL) -> list[TailFit]:
    """Spend ``n_pilot // K`` prompt-level draws on each prompt and fit each tail.

    The division remainder is left unspent.
    """
    k = len(samplers)
    if k == 0:
        raise ValueError("need at least one prompt")
    share = n_pilot // k
    need = min_batch_size(alpha, min_tail)
    if share < need:
        raise InsufficientTailError(f"pilot share {share} per prompt is below the {need} a tail fit needs")
    fits = []
    for sampler in samplers:
        batch_fn = getattr(sampler, "prompt_rewards", None)
        if batch_fn is not None:
            rewards = np.asarray(batch_fn(share), dtype=float)
        else:
            rewards = np.array([sampler.draw_reward(sampler.spawn_state()) for _ in range(share)])
        fits.append(fit_tail(rewards, alpha, min_tail=min_tail))
    return fits
