"""Byzantine attacks and defenses in tree-structured distributed detection networks."""

from .attack import FlipStrategy, LevelChannel, OperatingPoint, is_blinding, level_channel
from .divergence import min_kld, optimal_attack_strategy, total_kld
from .errors import (
    ApproximationDomainError,
    InfeasiblePlacementError,
    ValidationError,
)
from .identification import IdentificationParams, simulate_identification
from .stackelberg import Budgets, llp_greedy, solve_bilevel
from .topology import AttackConfig, AttackPlacement, TreeTopology, new_regular_tree

__all__ = [
    "ApproximationDomainError",
    "AttackConfig",
    "AttackPlacement",
    "Budgets",
    "FlipStrategy",
    "IdentificationParams",
    "InfeasiblePlacementError",
    "LevelChannel",
    "OperatingPoint",
    "TreeTopology",
    "ValidationError",
    "is_blinding",
    "level_channel",
    "llp_greedy",
    "min_kld",
    "new_regular_tree",
    "optimal_attack_strategy",
    "simulate_identification",
    "solve_bilevel",
    "total_kld",
]
