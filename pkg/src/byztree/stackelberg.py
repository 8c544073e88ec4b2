"""Defender/attacker resource-allocation game on the tree.

The FC (leader) assigns one protection cost per level from a descending
resource set; the attacker (follower) then buys Byzantines level by level
within its budget to minimize the divergence.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .attack import OperatingPoint
from .divergence import min_kld
from .errors import BlindingRegionWarning, EnumerationLimitError, ValidationError
from .topology import AttackConfig, TreeTopology

ENUMERATION_LIMIT = 2_000_000


@dataclass(frozen=True)
class Budgets:
    network: float
    attacker: float

    def __post_init__(self) -> None:
        if self.network < 0 or self.attacker < 0:
            raise ValidationError("budgets must be non-negative")


@dataclass(frozen=True)
class GameSolution:
    allocated_costs: tuple
    attack: AttackConfig
    defender_payoff: float
    attacker_profit: float
    blinded: bool


class Dominance(str, enum.Enum):
    STRICT = "strict"
    WEAK = "weak"
    NONE = "none"


def dominance(profit_a, cost_a, profit_b, cost_b) -> Dominance:
    """How attack set A relates to set B: more profit for no more cost."""
    if cost_a <= cost_b:
        if profit_a > profit_b:
            return Dominance.STRICT
        if profit_a == profit_b:
            return Dominance.WEAK
    return Dominance.NONE


def _check_descending(costs: Sequence) -> None:
    if not costs:
        raise ValidationError("cost set is empty")
    if any(c <= 0 for c in costs):
        raise ValidationError("costs must be positive")
    if any(a < b for a, b in zip(costs, costs[1:])):
        raise ValidationError(f"cost set {tuple(costs)} is not in descending order")


def check_cost_structure(cost_set: Sequence, topology: TreeTopology) -> bool:
    """``c_max <= min_k (N_{k+1} / N_k) * c_min``, which makes the greedy attack optimal."""
    _check_descending(cost_set)
    ratio = topology.min_level_ratio()
    if ratio is None:
        return True
    return Fraction(cost_set[0]) <= ratio * Fraction(cost_set[-1])


def _floor_div(budget, cost) -> int:
    return int(Fraction(budget) // Fraction(cost))


def _warn_if_blinding(config: AttackConfig) -> bool:
    t = config.coverages()[-1]
    if 2 * t >= 1:
        warnings.warn(
            f"attack {config.byzantine_counts} covers {float(t):.4g} >= 0.5 of the "
            "deepest level; blinded levels contribute zero divergence",
            BlindingRegionWarning,
            stacklevel=3,
        )
        return True
    return False


def _cascade(allocated_costs: Sequence, topology: TreeTopology, attacker_budget) -> AttackConfig:
    remaining = Fraction(attacker_budget)
    counts = []
    for c, n in zip(allocated_costs, topology.node_counts):
        b = min(_floor_div(remaining, c), n)
        remaining -= Fraction(c) * b
        counts.append(b)
    return AttackConfig(topology, tuple(counts))


def llp_greedy(allocated_costs: Sequence, topology: TreeTopology, attacker_budget) -> AttackConfig:
    """Attacker best response: fill levels top-down, as many as the budget buys."""
    if not allocated_costs:
        raise ValidationError("empty cost allocation")
    if len(allocated_costs) != topology.depth:
        raise ValidationError("one allocated cost per level is required")
    if attacker_budget < 0:
        raise ValidationError("attacker budget must be non-negative")
    config = _cascade(allocated_costs, topology, attacker_budget)
    _warn_if_blinding(config)
    return config


def _attack_space_size(topology: TreeTopology) -> int:
    return math.prod(n + 1 for n in topology.node_counts)


def _feasible_attacks(
    allocated_costs: Sequence, topology: TreeTopology, attacker_budget, limit: int
) -> Iterator[tuple[int, ...]]:
    size = _attack_space_size(topology)
    if size > limit:
        raise EnumerationLimitError(f"{size} attack configurations exceed the limit {limit}")
    costs = [Fraction(c) for c in allocated_costs]
    budget = Fraction(attacker_budget)
    for counts in itertools.product(*(range(n + 1) for n in topology.node_counts)):
        if sum(c * b for c, b in zip(costs, counts)) <= budget:
            yield counts


def payoff_table(
    allocated_costs: Sequence,
    topology: TreeTopology,
    operating_points: Sequence[OperatingPoint],
    attacker_budget,
    limit: int = ENUMERATION_LIMIT,
) -> list[tuple[tuple[int, ...], bool, float]]:
    """``(B, feasible, min D)`` for every attack configuration with ``0 <= B_k <= N_k``."""
    if _attack_space_size(topology) > limit:
        raise EnumerationLimitError("payoff table too large")
    costs = [Fraction(c) for c in allocated_costs]
    budget = Fraction(attacker_budget)
    rows = []
    for counts in itertools.product(*(range(n + 1) for n in topology.node_counts)):
        feasible = sum(c * b for c, b in zip(costs, counts)) <= budget
        d = min_kld(topology, AttackConfig(topology, counts), operating_points).total
        rows.append((counts, feasible, d))
    return rows


def llp_bruteforce(
    allocated_costs: Sequence,
    topology: TreeTopology,
    operating_points: Sequence[OperatingPoint],
    attacker_budget,
    limit: int = ENUMERATION_LIMIT,
) -> AttackConfig:
    """Exhaustive attacker best response; ties go to the lexicographically largest ``B``."""
    best_key = None
    best = None
    for counts in _feasible_attacks(allocated_costs, topology, attacker_budget, limit):
        d = min_kld(topology, AttackConfig(topology, counts), operating_points).total
        key = (-d, counts)
        if best_key is None or key > best_key:
            best_key, best = key, counts
    return AttackConfig(topology, best)


def _cost_subsets(cost_set: Sequence, depth: int) -> list[tuple]:
    return list(itertools.combinations(tuple(cost_set), depth))


def _network_cost(subset: Sequence, topology: TreeTopology) -> Fraction:
    return sum((Fraction(c) * n for c, n in zip(subset, topology.node_counts)), Fraction(0))


def _solution(
    subset: Sequence,
    config: AttackConfig,
    topology: TreeTopology,
    operating_points: Sequence[OperatingPoint],
) -> GameSolution:
    d = min_kld(topology, config, operating_points).total
    d0 = min_kld(topology, AttackConfig.none(topology), operating_points).total
    return GameSolution(
        allocated_costs=tuple(subset),
        attack=config,
        defender_payoff=d,
        attacker_profit=d0 - d,
        blinded=2 * config.coverages()[-1] >= 1,
    )


TIE_BREAKS = ("lookahead", "largest", "smallest")


def _algorithm_selection(
    cost_set: Sequence,
    topology: TreeTopology,
    operating_points: Sequence[OperatingPoint] | None,
    budgets: Budgets,
    tie_break: str = "lookahead",
) -> tuple[tuple, AttackConfig] | None:
    """Iterative elimination over the K-subsets that fit the network budget.

    Level by level, keep the subsets whose cost at that level buys the fewest
    Byzantines. When several cost values tie, ``tie_break`` decides:
    ``"largest"`` / ``"smallest"`` keep one value, ``"lookahead"`` follows
    every tied value to the end and keeps the branch with the largest
    divergence (largest cost first on equal divergence).
    """
    if tie_break not in TIE_BREAKS:
        raise ValidationError(f"tie_break must be one of {TIE_BREAKS}")
    if tie_break == "lookahead" and operating_points is None:
        raise ValidationError("lookahead tie-breaking needs operating points")
    subsets = [
        s for s in _cost_subsets(cost_set, topology.depth)
        if _network_cost(s, topology) <= Fraction(budgets.network)
    ]
    if not subsets:
        return None

    def descend(k, subsets, remaining, chosen, counts):
        if k == topology.depth:
            config = AttackConfig(topology, tuple(counts))
            return tuple(chosen), config
        fewest = min(_floor_div(remaining, s[k]) for s in subsets)
        tied = [s for s in subsets if _floor_div(remaining, s[k]) == fewest]
        values = sorted({s[k] for s in tied}, reverse=True)
        if tie_break == "largest":
            values = values[:1]
        elif tie_break == "smallest":
            values = values[-1:]
        b = min(fewest, topology.node_counts[k])
        best = None
        best_d = None
        for c in values:
            branch = descend(
                k + 1,
                [s for s in tied if s[k] == c],
                remaining - Fraction(c) * b,
                chosen + [c],
                counts + [b],
            )
            if len(values) == 1:
                return branch
            d = min_kld(topology, branch[1], operating_points).total
            if best_d is None or d > best_d:
                best, best_d = branch, d
        return best

    return descend(0, subsets, Fraction(budgets.attacker), [], [])


def solve_bilevel(
    cost_set: Sequence,
    topology: TreeTopology,
    operating_points: Sequence[OperatingPoint],
    budgets: Budgets,
    tie_break: str = "lookahead",
) -> GameSolution | None:
    """Leader allocation by iterative elimination over cost subsets.

    Returns None when no subset fits the network budget.
    """
    if not check_cost_structure(cost_set, topology):
        raise ValidationError(
            "cost set violates c_max <= min(N_{k+1}/N_k) * c_min; the greedy attack "
            "is not guaranteed optimal"
        )
    picked = _algorithm_selection(cost_set, topology, operating_points, budgets, tie_break)
    if picked is None:
        return None
    subset, config = picked
    _warn_if_blinding(config)
    return _solution(subset, config, topology, operating_points)


def bilevel_bruteforce(
    cost_set: Sequence,
    topology: TreeTopology,
    operating_points: Sequence[OperatingPoint],
    budgets: Budgets,
    limit: int = ENUMERATION_LIMIT,
) -> GameSolution | None:
    """Exhaustive leader search against the exhaustive attacker best response."""
    _check_descending(cost_set)
    subsets = [
        s for s in _cost_subsets(cost_set, topology.depth)
        if _network_cost(s, topology) <= Fraction(budgets.network)
    ]
    if not subsets:
        return None
    if len(subsets) * _attack_space_size(topology) > limit:
        raise EnumerationLimitError("bilevel enumeration exceeds the limit")
    preferred = _algorithm_selection(cost_set, topology, operating_points, budgets)
    preferred_subset = preferred[0] if preferred else None
    best = None
    for s in subsets:
        config = llp_bruteforce(s, topology, operating_points, budgets.attacker, limit)
        sol = _solution(s, config, topology, operating_points)
        if best is None or sol.defender_payoff > best.defender_payoff:
            best = sol
        elif sol.defender_payoff == best.defender_payoff and s == preferred_subset:
            best = sol
    return best
