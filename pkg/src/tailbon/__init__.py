"""Reward-tail scaling laws, guided test-time search and budget allocation."""

from .alloc import AllocationProblem, AllocationResult, allocate
from .dists import GaussianTailMixture, HierarchicalGaussian, PureGaussian, SyntheticSampler
from .gauss import expected_max, mills_ratio, std_normal_quantile, trunc_var_factor
from .search import SLGConfig, SearchOutcome, run_bon, run_oracle, run_slg, schedule
from .tail_fit import RewardBatch, TailFit, fit_tail, predict_value, tail_gof

__version__ = "0.1.0"

__all__ = [
    "AllocationProblem", "AllocationResult", "allocate",
    "GaussianTailMixture", "HierarchicalGaussian", "PureGaussian", "SyntheticSampler",
    "expected_max", "mills_ratio", "std_normal_quantile", "trunc_var_factor",
    "SLGConfig", "SearchOutcome", "run_bon", "run_oracle", "run_slg", "schedule",
    "RewardBatch", "TailFit", "fit_tail", "predict_value", "tail_gof",
]
