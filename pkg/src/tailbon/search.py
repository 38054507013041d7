"""Two-stage test-time search over a reward sampler.

Algorithms: Best-of-N, scaling-law guided search (SLG) with tail or mean
selection, and the truth-informed oracles used as regret references.

One budget unit buys one reward draw. Spawning a state costs
``spawn_cost`` units (0 by default); Best-of-N trajectories cost 1 each.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Literal, Optional, Protocol, runtime_checkable

import numpy as np

from .gauss import expected_max
from .tail_fit import DEFAULT_ALPHA, MIN_TAIL, TailFit, fit_tail, min_batch_size, predict_value


@runtime_checkable
class SamplerPort(Protocol):
    def spawn_state(self, prompt=None) -> Any: ...

    def draw_reward(self, state) -> float: ...


class InsufficientBudgetError(ValueError):
    pass


class SamplerFailure(RuntimeError):
    """A sampler call failed mid-run; ``budget_used`` is what was spent before it."""

    def __init__(self, message: str, budget_used: int):
        super().__init__(message)
        self.budget_used = budget_used


@dataclass(frozen=True)
class BudgetSchedule:
    N: int
    m: int
    K: int

    def __post_init__(self):
        if self.m < 1 or self.K < 1:
            raise ValueError("schedule needs m >= 1 and K >= 1")
        if self.K * self.m > self.N:
            raise InsufficientBudgetError(f"K*m = {self.K * self.m} exceeds N = {self.N}")


def schedule(N: int) -> BudgetSchedule:
    """Budget-dependent (m, K).

    m = 5 * round((ln N)^3 / 25) and K = min(round(N / 2m), floor(N / (m + 2))),
    with Python's half-to-even rounding.
    """
    if N < 20:
        raise ValueError("the default schedule needs N >= 20")
    m = 5 * round(math.log(N) ** 3 / 25)
    K = min(round(N / (2 * m)), N // (m + 2))
    return BudgetSchedule(N, m, K)


@dataclass
class StateStat:
    index: int
    state_id: Any
    pilot_mean: float
    score: float
    fit: Optional[TailFit] = None


@dataclass
class SearchOutcome:
    algo: str
    N: int
    best_reward: float
    chosen_state: Optional[int]
    budget_used: int
    responses_generated: int
    K: int = 0
    m: int = 0
    per_state: list[StateStat] = field(default_factory=list)
    selector_used: str = ""
    over_budget: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_state"] = [
            {**{k: v for k, v in asdict(s).items() if k != "fit"},
             "state_id": s.state_id if isinstance(s.state_id, (int, str)) else repr(s.state_id),
             "fit": s.fit.to_dict() if s.fit else None}
            for s in self.per_state
        ]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def csv_row(self, trial: int, seed: int) -> dict:
        return {"trial": trial, "seed": seed, "algo": self.algo, "N": self.N, "K": self.K, "m": self.m,
                "best_reward": self.best_reward,
                "chosen_state": "" if self.chosen_state is None else self.chosen_state,
                "budget_used": self.budget_used}


CSV_COLUMNS = ["trial", "seed", "algo", "N", "K", "m", "best_reward", "chosen_state", "budget_used"]


class _Meter:
    """Budget counter that wraps sampler failures with the spend so far."""

    def __init__(self, sampler):
        self.sampler = sampler
        self.used = 0
        self.responses = 0

    def _call(self, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            raise SamplerFailure(f"sampler call failed after {self.used} budget units: {exc}", self.used) from exc

    def spawn(self, k: int, cost: int, prompt) -> list:
        many = getattr(self.sampler, "spawn_states", None)
        states = (self._call(many, k, prompt) if many is not None
                  else [self._call(self.sampler.spawn_state, prompt) for _ in range(k)])
        self.used += cost * k
        return states

    def draws(self, state, n: int) -> np.ndarray:
        batch = getattr(self.sampler, "draw_rewards", None)
        if batch is not None:
            out = np.asarray(self._call(batch, state, n), dtype=float)
        else:
            out = np.empty(n)
            for i in range(n):
                out[i] = self._call(self.sampler.draw_reward, state)
                self.used += 1
                self.responses += 1
            return out
        self.used += n
        self.responses += n
        return out

    def best_of(self, state, n: int, fast: bool) -> float:
        if n <= 0:
            return -math.inf
        fast_max = getattr(self.sampler, "draw_max", None)
        if fast and fast_max is not None:
            best = float(self._call(fast_max, state, n))
            self.used += n
            self.responses += n
            return best
        return float(self.draws(state, n).max())


def run_bon(sampler, N: int, *, prompt=None, fast: bool = True) -> SearchOutcome:
    """Best-of-N: N independent trajectories straight from the prompt."""
    if N < 1:
        raise ValueError("N must be >= 1")
    meter = _Meter(sampler)
    bon_max = getattr(sampler, "bon_max", None)
    if fast and bon_max is not None:
        best = float(meter._call(bon_max, N))
        meter.used = meter.responses = N
    else:
        best = -math.inf
        for _ in range(N):
            state = meter._call(sampler.spawn_state, prompt)
            best = max(best, float(meter._call(sampler.draw_reward, state)))
            meter.used += 1
            meter.responses += 1
    return SearchOutcome("bon", N, best, None, meter.used, meter.responses, K=N, m=1)


@dataclass(frozen=True)
class SLGConfig:
    """Knobs for :func:`run_slg`. ``m``/``K`` override the default schedule."""

    m: Optional[int] = None
    K: Optional[int] = None
    alpha: float = DEFAULT_ALPHA
    selector: Literal["tail", "mean"] = "tail"
    greedy_pilot: bool = True
    spawn_cost: int = 0
    min_tail: int = MIN_TAIL
    fast_exploit: bool = True

    def resolve(self, N: int) -> tuple[int, int]:
        if self.m is not None and self.K is not None:
            return int(self.m), int(self.K)
        base = schedule(N)
        return int(self.m or base.m), int(self.K or base.K)


def _score_states(pilots: list[np.ndarray], N: int, cfg: SLGConfig) -> tuple[list[float], list, str]:
    means = [float(p.mean()) for p in pilots]
    if cfg.selector == "mean" or len(pilots[0]) < min_batch_size(cfg.alpha, cfg.min_tail):
        return means, [None] * len(pilots), "mean"
    fits = [fit_tail(p, cfg.alpha, min_tail=cfg.min_tail) for p in pilots]
    # a collapsed tail carries no scale information; rank it by its pilot mean
    scores = [mu if f.degenerate else float(predict_value(f, N)) for f, mu in zip(fits, means)]
    return scores, fits, "tail"


def run_slg(sampler, N: int, config: SLGConfig = SLGConfig(), *, prompt=None) -> SearchOutcome:
    """Scaling-law guided search.

    Spawns K states, draws m pilot rewards from each, ranks the states by
    extrapolated best-of-N value (or by pilot mean), and spends the rest of
    the budget on the top-ranked state. When K <= m and ``greedy_pilot`` is
    on, m single-draw trajectories are sampled first and the K states with
    the best observed rewards become the candidates. Pilots too short for a
    tail fit fall back to mean ranking.
    """
    if config.selector not in ("tail", "mean"):
        raise ValueError(f"unknown selector {config.selector!r}")
    m, K = config.resolve(N)
    if m < 1 or K < 1:
        raise ValueError("need m >= 1 and K >= 1")
    greedy = config.greedy_pilot and K <= m
    spawned = m if greedy else K
    overhead = K * m + config.spawn_cost * spawned + (m if greedy else 0)
    if N < overhead + 1:
        raise InsufficientBudgetError(f"N = {N} leaves no exploitation budget after {overhead} pilot units")

    meter = _Meter(sampler)
    best = -math.inf
    if greedy:
        pool = meter.spawn(m, config.spawn_cost, prompt)
        first = np.array([meter.draws(s, 1)[0] for s in pool])
        best = float(first.max())
        keep = np.argsort(-first, kind="stable")[:K]
        states = [pool[i] for i in sorted(keep)]
    else:
        states = meter.spawn(K, config.spawn_cost, prompt)

    pilots = [meter.draws(s, m) for s in states]
    best = max(best, max(float(p.max()) for p in pilots))
    scores, fits, used = _score_states(pilots, N, config)
    chosen = int(np.argmax(scores))

    best = max(best, meter.best_of(states[chosen], N - meter.used, config.fast_exploit))
    per_state = [StateStat(i, getattr(s, "id", i), float(p.mean()), float(sc), f)
                 for i, (s, p, sc, f) in enumerate(zip(states, pilots, scores, fits))]
    return SearchOutcome(f"slg_{config.selector}", N, best, chosen, meter.used, meter.responses,
                         K=K, m=m, per_state=per_state, selector_used=used)


def run_oracle(sampler, N: int, variant: str = "full", K: Optional[int] = None, *,
               spawn_cost: int = 0, prompt=None, fast: bool = True) -> SearchOutcome:
    """Truth-informed reference strategies.

    ``variant="full"`` spawns N candidates and exploits the one with the
    largest true best-of-N value with N draws; it is charged 2N units and
    flagged ``over_budget``. ``variant="restricted"`` does the same over K
    candidates.
    """
    truth = getattr(sampler, "truth", None)
    if truth is None:
        from .dists import UnsupportedSamplerError
        raise UnsupportedSamplerError("oracle search needs a sampler exposing truth()")
    if variant == "full":
        width, cost = N, 1
    elif variant == "restricted":
        if K is None or K < 1:
            raise ValueError("restricted oracle needs K >= 1")
        width, cost = K, spawn_cost
    else:
        raise ValueError(f"unknown oracle variant {variant!r}")

    meter = _Meter(sampler)
    states = meter.spawn(width, cost, prompt)
    params = np.array([truth(s) for s in states], dtype=float)
    values = params[:, 0] + params[:, 1] * expected_max(N)
    chosen = int(np.argmax(values))
    best = meter.best_of(states[chosen], N, fast)
    if variant == "full":
        meter.responses += N
    per_state = [StateStat(i, getattr(s, "id", i), math.nan, float(v)) for i, (s, v) in enumerate(zip(states, values))]
    return SearchOutcome(f"oracle_{variant}", N, best, chosen, meter.used, meter.responses,
                         K=width, m=0, per_state=per_state, selector_used="truth",
                         over_budget=meter.used > N)
