"""Leverage-score feature selection for receding-horizon visual state estimation."""

__version__ = "0.1.0"

from .errors import FeatselError, HorizonAbort, InvalidInputError
from .estimator import fuse
from .motion import GaussianBelief, InformationState, from_information, propagate_prior, to_information
from .selection import (
    CandidateSet,
    Measure,
    best_of_restarts,
    certify_bounds,
    evaluate_measure,
    greedy_select,
    leverage_scores,
    sample_subset,
)
from .simenv import ScenarioConfig, run_benchmark

__all__ = [
    "CandidateSet",
    "FeatselError",
    "GaussianBelief",
    "HorizonAbort",
    "InformationState",
    "InvalidInputError",
    "Measure",
    "ScenarioConfig",
    "best_of_restarts",
    "certify_bounds",
    "evaluate_measure",
    "from_information",
    "fuse",
    "greedy_select",
    "leverage_scores",
    "propagate_prior",
    "run_benchmark",
    "sample_subset",
    "to_information",
]
