"""Sampling group-fair rankings from individually-fair distributions."""

from .bounds import alpha_bound_blocks, alpha_bound_delta, alpha_bound_k
from .model import (
    Group,
    Instance,
    Matching,
    MatchingMarginal,
    MarginalD,
    ParseError,
    Policy,
    RankingMatrix,
    ValidationError,
    build_instance,
    load_instance,
    save_instance,
    utility,
    validate,
)
from .pipeline import (
    RankingPolicy,
    pad_instance,
    project_g,
    refine_f,
    run_main_algorithm,
    sample,
    sample_many,
)

__version__ = "0.1.0"

__all__ = [
    "Group",
    "Instance",
    "Matching",
    "MatchingMarginal",
    "MarginalD",
    "ParseError",
    "Policy",
    "RankingMatrix",
    "RankingPolicy",
    "ValidationError",
    "alpha_bound_blocks",
    "alpha_bound_delta",
    "alpha_bound_k",
    "build_instance",
    "load_instance",
    "pad_instance",
    "project_g",
    "refine_f",
    "run_main_algorithm",
    "sample",
    "sample_many",
    "save_instance",
    "utility",
    "validate",
]
