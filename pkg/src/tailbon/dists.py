"""Synthetic reward distributions with ground-truth value oracles.

Three families:

* :class:`PureGaussian` -- the whole distribution is normal.
* :class:`GaussianTailMixture` -- an arbitrary body below ``r_alpha`` spliced
  onto an exact normal upper tail of mass ``alpha``.
* :class:`HierarchicalGaussian` -- two-stage generation: each state has a
  latent mean drawn from ``N(mu0, sigma0^2)`` and emits ``N(mu, sigma1^2)``
  rewards.

States are :class:`StateHandle` objects. Their latent parameters are not
attributes; only :func:`state_truth` reads them, and only oracle-capable
samplers call it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import special

from .gauss import expected_max, std_normal_isf, std_normal_pdf, std_normal_quantile
from .tail_fit import RewardBatch

_MC_CHUNK = 1 << 20


@dataclass(frozen=True)
class BodySpec:
    """Gaussian mixture body, in units of the tail's (mu, sigma)."""

    weights: tuple[float, ...] = (0.35, 0.65)
    means: tuple[float, ...] = (-2.4, -0.5)
    sigmas: tuple[float, ...] = (0.9, 0.55)

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.sigmas) >= 1):
            raise ValueError("body components need matching weights, means and sigmas")
        if any(w <= 0 for w in self.weights) or any(s <= 0 for s in self.sigmas):
            raise ValueError("body weights and sigmas must be positive")
        total = sum(self.weights)
        object.__setattr__(self, "weights", tuple(float(w) / total for w in self.weights))
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))


@dataclass(frozen=True)
class PureGaussian:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def ppf(self, u):
        return self.mu + self.sigma * std_normal_quantile(u)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu + self.sigma * rng.standard_normal(n)

    def max_quantile(self, u, n: int):
        """Quantile of the maximum of ``n`` draws at level ``u``."""
        return self.mu + self.sigma * std_normal_isf(_upper_mass(u, n))


@dataclass(frozen=True)
class GaussianTailMixture:
    alpha: float = 0.2
    mu: float = 0.0
    sigma: float = 1.0
    body: BodySpec = field(default_factory=BodySpec)
    _table: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        xs = np.linspace(self._lo, self.r_alpha, 4097)
        cdf = self._body_cdf_raw(xs) / self._body_cdf_raw(self.r_alpha)
        object.__setattr__(self, "_table", (xs, cdf))

    @property
    def r_alpha(self) -> float:
        return self.mu + self.sigma * std_normal_isf(self.alpha)

    @property
    def _lo(self) -> float:
        return self.mu + self.sigma * min(m - 12.0 * s for m, s in zip(self.body.means, self.body.sigmas))

    def _components(self):
        for w, m, s in zip(self.body.weights, self.body.means, self.body.sigmas):
            yield w, self.mu + self.sigma * m, self.sigma * s

    def _body_cdf_raw(self, x):
        return sum(w * special.ndtr((np.asarray(x) - a) / b) for w, a, b in self._components())

    def _body_pdf_raw(self, x):
        return sum(w * std_normal_pdf((np.asarray(x) - a) / b) / b for w, a, b in self._components())

    def _body_ppf(self, v: np.ndarray) -> np.ndarray:
        """Quantile of the body renormalized to (-inf, r_alpha); v in [0, 1)."""
        xs, cdf = self._table
        x = np.interp(v, cdf, xs)
        norm = self._body_cdf_raw(self.r_alpha)
        target = v * norm
        for _ in range(4):
            dens = self._body_pdf_raw(x)
            step = np.where(dens > 0, (self._body_cdf_raw(x) - target) / np.where(dens > 0, dens, 1.0), 0.0)
            x = np.clip(x - step, xs[0], self.r_alpha)
        return x

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        flat = np.atleast_1d(u).ravel()
        out = np.empty_like(flat)
        cut = 1.0 - self.alpha
        tail = flat >= cut
        if tail.any():
            out[tail] = self.mu + self.sigma * std_normal_isf(np.maximum(1.0 - flat[tail], 1e-300))
        if (~tail).any():
            out[~tail] = self._body_ppf(flat[~tail] / cut)
        out = out.reshape(u.shape)
        return float(out) if u.ndim == 0 else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.ppf(rng.random(n))

    def max_quantile(self, u, n: int):
        q = _upper_mass(u, n)
        out = np.empty_like(q)
        tail = q <= self.alpha
        out[tail] = self.mu + self.sigma * std_normal_isf(q[tail])
        if (~tail).any():
            out[~tail] = self._body_ppf((1.0 - q[~tail]) / (1.0 - self.alpha))
        return out

    def cdf(self, x):
        """Mixture CDF: body mass 1 - alpha below r_alpha, exact normal above."""
        x = np.asarray(x, dtype=float)
        body = (1.0 - self.alpha) * self._body_cdf_raw(np.minimum(x, self.r_alpha)) / self._body_cdf_raw(self.r_alpha)
        tail = 1.0 - special.ndtr(-(x - self.mu) / self.sigma)
        return np.where(x < self.r_alpha, body, tail)


@dataclass(frozen=True)
class HierarchicalGaussian:
    mu0: float = 0.0
    sigma0: float = 1.0
    sigma1: float = 1.0

    def __post_init__(self):
        if self.sigma0 < 0 or not self.sigma1 > 0:
            raise ValueError("need sigma0 >= 0 and sigma1 > 0")

    @property
    def t(self) -> float:
        return self.sigma1 / self.sigma0 if self.sigma0 > 0 else math.inf

    def pooled(self) -> PureGaussian:
        """Reward law of a fresh state's single draw: N(mu0, sigma0^2 + sigma1^2)."""
        return PureGaussian(self.mu0, math.hypot(self.sigma0, self.sigma1))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        latent = self.mu0 + self.sigma0 * rng.standard_normal(n)
        return latent + self.sigma1 * rng.standard_normal(n)

    def max_quantile(self, u, n: int):
        return self.pooled().max_quantile(u, n)


SyntheticDist = Union[PureGaussian, GaussianTailMixture, HierarchicalGaussian]

_state_ids = itertools.count()


class StateHandle:
    """Opaque reference to an intermediate state."""

    __slots__ = ("id", "__dist")

    def __init__(self, dist: PureGaussian | GaussianTailMixture, id=None):
        self.id = next(_state_ids) if id is None else id
        self.__dist = dist

    def __repr__(self) -> str:
        return f"StateHandle(id={self.id!r})"

    def _law(self):
        return self.__dist


def state_truth(state: StateHandle) -> tuple[float, float]:
    """Latent tail parameters (mu, sigma) of a state. Oracle use only."""
    law = state._law()
    return law.mu, law.sigma


def _law(d):
    return d._law() if isinstance(d, StateHandle) else d


def _upper_mass(u, n: int) -> np.ndarray:
    """1 - u**(1/n) without cancellation."""
    u = np.asarray(u, dtype=float)
    q = -np.expm1(np.log(u) / n)
    return np.clip(q, 1e-300, 1.0 - 1e-16)


# ---------------------------------------------------------------------------
# Public operations


def sample_rewards(d, n: int, rng: np.random.Generator, *, source_id: str = "", seed_path: str = "") -> RewardBatch:
    """Draw ``n`` rewards from a distribution or a state."""
    if n < 1:
        raise ValueError("n must be >= 1")
    law = _law(d)
    if not source_id:
        source_id = f"state-{d.id}" if isinstance(d, StateHandle) else type(law).__name__
    return RewardBatch(law.sample(n, rng), source_id=source_id, seed_path=seed_path)


def spawn_state(d, rng: np.random.Generator) -> StateHandle:
    """Generate an intermediate state.

    For a hierarchical distribution the latent mean is drawn from the prior;
    any other distribution yields a state that emits that distribution.
    """
    if isinstance(d, HierarchicalGaussian):
        return StateHandle(PureGaussian(d.mu0 + d.sigma0 * float(rng.standard_normal()), d.sigma1))
    if isinstance(d, (PureGaussian, GaussianTailMixture)):
        return StateHandle(d)
    raise TypeError(f"cannot spawn a state from {type(d).__name__}")


def spawn_states(d: HierarchicalGaussian, k: int, rng: np.random.Generator) -> list[StateHandle]:
    """Vectorized :func:`spawn_state`; consumes the stream exactly as k single spawns would."""
    if isinstance(d, HierarchicalGaussian):
        mus = d.mu0 + d.sigma0 * rng.standard_normal(k)
        return [StateHandle(PureGaussian(float(m), d.sigma1)) for m in mus]
    return [spawn_state(d, rng) for _ in range(k)]


def max_of_draws(d, n: int, rng: np.random.Generator, size: int | None = None):
    """Maximum of ``n`` i.i.d. draws via the quantile trick (exact in distribution)."""
    u = rng.random(size if size is not None else 1)
    out = _law(d).max_quantile(u, n)
    return float(out[0]) if size is None else out


def mc_value(d, n: int, trials: int, rng: np.random.Generator, *, method: str = "quantile") -> tuple[float, float]:
    """Monte Carlo estimate of the expected best-of-``n`` reward.

    ``method="quantile"`` samples each trial's maximum directly; ``"direct"``
    draws all ``n`` rewards per trial and takes the max.

    Returns:
        (estimate, standard error)
    """
    if n < 1:
        raise ValueError("N must be >= 1")
    if trials < 2:
        raise ValueError("mc_value needs at least 2 trials")
    law = _law(d)
    if method == "quantile":
        maxima = np.concatenate([
            law.max_quantile(rng.random(c), n) for c in _chunks(trials, _MC_CHUNK)
        ])
    elif method == "direct":
        per = max(1, _MC_CHUNK // n)
        maxima = np.concatenate([
            law.sample(c * n, rng).reshape(c, n).max(axis=1) for c in _chunks(trials, per)
        ])
    else:
        raise ValueError(f"unknown mc method {method!r}")
    return float(maxima.mean()), float(maxima.std(ddof=1) / math.sqrt(trials))


def _chunks(total: int, size: int):
    while total > 0:
        yield min(total, size)
        total -= size


def true_value(d, n: int, *, trials: int = 100_000, rng: np.random.Generator | None = None) -> float:
    """Ground-truth expected best-of-``n`` reward.

    Closed form for Gaussian laws; Monte Carlo for the spliced mixture and
    for a hierarchical prompt.
    """
    if n < 1:
        raise ValueError("N must be >= 1")
    law = _law(d)
    if isinstance(law, PureGaussian):
        return law.mu + law.sigma * expected_max(n)
    if rng is None:
        from .rng import stream
        rng = stream(0, "true_value", n)
    return mc_value(law, n, trials, rng)[0]


# ---------------------------------------------------------------------------
# JSON config blocks

_VARIANTS = {
    "pure_gaussian": PureGaussian,
    "gaussian_tail_mixture": GaussianTailMixture,
    "hierarchical_gaussian": HierarchicalGaussian,
}


def dist_to_config(d: SyntheticDist) -> dict:
    if isinstance(d, PureGaussian):
        return {"variant": "pure_gaussian", "mu": d.mu, "sigma": d.sigma}
    if isinstance(d, GaussianTailMixture):
        return {"variant": "gaussian_tail_mixture", "alpha": d.alpha, "mu": d.mu, "sigma": d.sigma,
                "body": {"weights": list(d.body.weights), "means": list(d.body.means),
                         "sigmas": list(d.body.sigmas)}}
    if isinstance(d, HierarchicalGaussian):
        return {"variant": "hierarchical_gaussian", "mu0": d.mu0, "sigma0": d.sigma0, "sigma1": d.sigma1}
    raise TypeError(f"not a synthetic distribution: {d!r}")


def dist_from_config(cfg: dict) -> SyntheticDist:
    cfg = dict(cfg)
    variant = cfg.pop("variant", None)
    if variant not in _VARIANTS:
        raise ValueError(f"unknown distribution variant {variant!r}; expected one of {sorted(_VARIANTS)}")
    if variant == "gaussian_tail_mixture" and "body" in cfg:
        cfg["body"] = BodySpec(**{k: tuple(v) for k, v in cfg["body"].items()})
    return _VARIANTS[variant](**cfg)


__all__ = [
    "BodySpec", "PureGaussian", "GaussianTailMixture", "HierarchicalGaussian", "SyntheticDist",
    "StateHandle", "state_truth", "sample_rewards", "spawn_state", "spawn_states", "max_of_draws",
    "mc_value", "true_value", "dist_to_config", "dist_from_config", "SyntheticSampler", "UnsupportedSamplerError",
]


# ---------------------------------------------------------------------------
# Sampler backed by a synthetic distribution


class UnsupportedSamplerError(TypeError):
    """The sampler cannot expose latent state parameters."""


class SyntheticSampler:
    """Sampler over a synthetic distribution, bound to one random stream.

    States are numbered in spawn order. With ``oracle=True`` the sampler also
    answers :meth:`truth`, which search algorithms other than the oracles
    never call.
    """

    def __init__(self, dist: SyntheticDist, rng: np.random.Generator, *, oracle: bool = False):
        self.dist = dist
        self.rng = rng
        self.oracle = oracle
        self._next_id = 0

    def _new_ids(self, k: int) -> range:
        ids = range(self._next_id, self._next_id + k)
        self._next_id += k
        return ids

    def spawn_state(self, prompt=None) -> StateHandle:
        state = spawn_state(self.dist, self.rng)
        state.id = self._new_ids(1)[0]
        return state

    def spawn_states(self, k: int, prompt=None) -> list[StateHandle]:
        states = spawn_states(self.dist, k, self.rng)
        for s, i in zip(states, self._new_ids(k)):
            s.id = i
        return states

    def draw_reward(self, state: StateHandle) -> float:
        return float(state._law().sample(1, self.rng)[0])

    def draw_rewards(self, state: StateHandle, n: int) -> np.ndarray:
        return state._law().sample(n, self.rng)

    def draw_max(self, state: StateHandle, n: int) -> float:
        return max_of_draws(state, n, self.rng)

    def bon_max(self, n: int) -> float:
        """Best of ``n`` single draws, each from a freshly spawned state."""
        return max_of_draws(self.dist, n, self.rng)

    def truth(self, state: StateHandle) -> tuple[float, float]:
        if not self.oracle:
            raise UnsupportedSamplerError("this sampler was not built with oracle access")
        return state_truth(state)

    def prompt_rewards(self, n: int) -> np.ndarray:
        """``n`` rewards, each from a freshly spawned state."""
        return self.dist.sample(n, self.rng)
