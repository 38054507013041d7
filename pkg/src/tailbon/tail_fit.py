"""Tail-moment fitting and best-of-N extrapolation.

The upper ``alpha/2`` tail of a reward sample is treated as a normal
distribution truncated from below. Its empirical mean and variance are
inverted for the parent ``(mu, sigma)``, and the best-of-N value is
extrapolated as ``mu + sigma * E(N)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gauss import Method, expected_max, mills_ratio, std_normal_isf, std_normal_quantile, trunc_var_factor

DEFAULT_ALPHA = 0.2
MIN_TAIL = 3
VARIANCE_FLOOR = 1e-12
SIGMA_FLOOR = 1e-6


class InsufficientTailError(ValueError):
    """The sample is too small for the requested tail fraction."""


@dataclass(frozen=True)
class RewardBatch:
    rewards: np.ndarray
    source_id: str = ""
    seed_path: str = ""

    def __post_init__(self):
        arr = np.asarray(self.rewards, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("reward batch is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("reward batch contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "rewards", arr)

    def __len__(self) -> int:
        return self.rewards.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["reward"])
        writer.writerows([[repr(float(r))] for r in self.rewards])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, source_id: str = "", seed_path: str = "") -> "RewardBatch":
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and "reward" not in rows[0]:
            raise ValueError("reward CSV needs a 'reward' column")
        return cls(np.array([float(r["reward"]) for r in rows]), source_id, seed_path)

    def to_json(self) -> str:
        return json.dumps([float(r) for r in self.rewards])

    @classmethod
    def from_json(cls, text: str, source_id: str = "", seed_path: str = "") -> "RewardBatch":
        data = json.loads(text)
        if not isinstance(data, list):
            raise ValueError("reward JSON must be an array of numbers")
        return cls(np.array(data, dtype=float), source_id, seed_path)

    @classmethod
    def load(cls, path: str | Path) -> "RewardBatch":
        path = Path(path)
        text = path.read_text()
        loader = cls.from_json if path.suffix.lower() == ".json" else cls.from_csv
        return loader(text, source_id=path.stem)


@dataclass(frozen=True)
class TailFit:
    alpha: float
    threshold: float
    tail_mean: float
    tail_var: float
    mu_hat: float
    sigma_hat: float
    m_total: int
    m_tail: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "TailFit":
        """Full record, or just ``mu_hat``/``sigma_hat`` (plus optional ``alpha``)."""
        if "threshold" not in data:
            return cls.from_params(float(data["mu_hat"]), float(data["sigma_hat"]),
                                   float(data.get("alpha", DEFAULT_ALPHA)))
        return cls(
            alpha=float(data["alpha"]),
            threshold=float(data["threshold"]),
            tail_mean=float(data["tail_mean"]),
            tail_var=float(data["tail_var"]),
            mu_hat=float(data["mu_hat"]),
            sigma_hat=float(data["sigma_hat"]),
            m_total=int(data["m_total"]),
            m_tail=int(data["m_tail"]),
            degenerate=bool(data.get("degenerate", False)),
        )

    @classmethod
    def from_params(cls, mu: float, sigma: float, alpha: float = DEFAULT_ALPHA) -> "TailFit":
        """A fit carrying known parameters, e.g. for planning with a prior."""
        z = tail_z(alpha)
        lam = mills_ratio(z)
        return cls(alpha, mu + sigma * z, mu + sigma * lam, sigma**2 * trunc_var_factor(z),
                   float(mu), float(sigma), 0, 0, False)


def _as_rewards(batch) -> np.ndarray:
    if isinstance(batch, RewardBatch):
        return batch.rewards
    return RewardBatch(batch).rewards


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"tail fraction alpha must lie in (0, 1), got {alpha}")


def tail_z(alpha: float) -> float:
    """Standardized truncation point Phi^{-1}(1 - alpha/2)."""
    return std_normal_quantile(1.0 - alpha / 2.0)


def min_batch_size(alpha: float, min_tail: int = MIN_TAIL) -> int:
    return math.ceil(2 * min_tail / alpha - 1e-9)


def threshold_index(m: int, alpha: float) -> int:
    """1-based rank of the (1 - alpha/2) empirical quantile in the ascending sort."""
    # the epsilon keeps e.g. 0.9 * 100 from rounding up to rank 91
    return max(1, math.ceil((1.0 - alpha / 2.0) * m - 1e-9))


def invert_tail_moments(tail_mean, tail_var, z):
    """Recover (mu, sigma) from the mean and variance of a normal truncated at z."""
    sigma = np.sqrt(np.asarray(tail_var, dtype=float) / trunc_var_factor(z))
    mu = tail_mean - sigma * mills_ratio(z)
    if np.ndim(sigma) == 0:
        return float(mu), float(sigma)
    return mu, sigma


def fit_tail(
    batch,
    alpha: float = DEFAULT_ALPHA,
    *,
    min_tail: int = MIN_TAIL,
    variance_floor: float = VARIANCE_FLOOR,
    sigma_floor: float = SIGMA_FLOOR,
) -> TailFit:
    """Fit the parent normal of the top ``alpha/2`` tail of ``batch``.

    Ties at the threshold are kept in the tail. A tail whose population
    variance falls below ``variance_floor`` is flagged degenerate and gets
    ``sigma_hat = sigma_floor`` instead of raising, so callers can still
    rank it.

    Raises:
        ValueError: empty batch or alpha outside (0, 1).
        InsufficientTailError: fewer than ``ceil(2 * min_tail / alpha)`` rewards.
    """
    _check_alpha(alpha)
    r = _as_rewards(batch)
    m = r.size
    need = min_batch_size(alpha, min_tail)
    if m < need:
        raise InsufficientTailError(
            f"{m} rewards cannot support a {alpha / 2:g} tail with {min_tail} samples (need {need})"
        )
    ordered = np.sort(r)
    threshold = float(ordered[threshold_index(m, alpha) - 1])
    tail = ordered[ordered >= threshold]
    tail_mean = float(tail.mean())
    tail_var = float(np.mean((tail - tail_mean) ** 2))
    z = tail_z(alpha)
    degenerate = tail_var < variance_floor
    if degenerate:
        sigma = sigma_floor
        mu = tail_mean - sigma * mills_ratio(z)
    else:
        mu, sigma = invert_tail_moments(tail_mean, tail_var, z)
        if sigma < sigma_floor:
            sigma = sigma_floor
            mu = tail_mean - sigma * mills_ratio(z)
    return TailFit(alpha, threshold, tail_mean, tail_var, float(mu), float(sigma), m, int(tail.size), degenerate)


def predict_value(fit: TailFit, n, method: Method = "quadrature"):
    """Extrapolated expected best-of-``n`` reward, ``mu_hat + sigma_hat * E(n)``."""
    return fit.mu_hat + fit.sigma_hat * expected_max(n, method)


@dataclass(frozen=True)
class ScalingCurve:
    fit: TailFit
    points: list[tuple[int, float]]


def scaling_curve(fit: TailFit, budgets: Sequence[int]) -> ScalingCurve:
    budgets = [int(n) for n in budgets]
    if not budgets:
        raise ValueError("budgets must be non-empty")
    values = predict_value(fit, np.array(budgets))
    return ScalingCurve(fit, [(n, float(v)) for n, v in zip(budgets, values)])


# ---------------------------------------------------------------------------
# Goodness of fit


@dataclass(frozen=True)
class GofReport:
    tail_r2: float
    global_r2: float
    tail_fraction_used: float
    degenerate: bool = False
    global_qq: np.ndarray = field(default=None, repr=False, compare=False)
    tail_qq: np.ndarray = field(default=None, repr=False, compare=False)

    def summary(self) -> dict:
        return {"tail_r2": self.tail_r2, "global_r2": self.global_r2,
                "tail_fraction_used": self.tail_fraction_used, "degenerate": self.degenerate}


def _r2(empirical: np.ndarray, theoretical: np.ndarray) -> float:
    """1 - SS_res/SS_tot of the data against the fitted model's quantiles, clipped to [0, 1]."""
    ss_tot = float(np.sum((empirical - empirical.mean()) ** 2))
    if ss_tot <= 0.0:
        return 0.0
    ss_res = float(np.sum((empirical - theoretical) ** 2))
    return float(min(1.0, max(0.0, 1.0 - ss_res / ss_tot)))


def _plotting_positions(n: int) -> np.ndarray:
    return (np.arange(1, n + 1) - 0.5) / n


def tail_gof(batch, alpha: float = DEFAULT_ALPHA, *, min_tail: int = MIN_TAIL) -> GofReport:
    """Q-Q goodness of fit: a normal fitted to everything vs. the truncated-normal tail fit."""
    fit = fit_tail(batch, alpha, min_tail=min_tail)
    r = np.sort(_as_rewards(batch))
    m = r.size

    sd = float(r.std())
    if sd > 0.0:
        global_theory = r.mean() + sd * std_normal_quantile(_plotting_positions(m))
        global_r2 = _r2(r, global_theory)
    else:
        global_theory = np.full(m, r.mean())
        global_r2 = 0.0

    tail = r[r >= fit.threshold]
    q = alpha / 2.0
    # quantiles of N(mu_hat, sigma_hat^2) conditioned on exceeding its own (1 - q) point
    tail_theory = fit.mu_hat + fit.sigma_hat * std_normal_isf(q * (1.0 - _plotting_positions(tail.size)))
    tail_r2 = 0.0 if fit.degenerate else _r2(tail, tail_theory)

    return GofReport(
        tail_r2=tail_r2,
        global_r2=global_r2,
        tail_fraction_used=tail.size / m,
        degenerate=fit.degenerate,
        global_qq=np.column_stack([global_theory, r]),
        tail_qq=np.column_stack([tail_theory, tail]),
    )
