"""Regular tree networks rooted at the fusion center, and Byzantine attack geometry.

Levels are numbered from 1 (children of the fusion center) to K (leaves).
Nodes at each level are indexed ``0 .. N_k - 1`` so that the parent of node
``i`` at level ``k + 1`` is node ``i // a_{k+1}`` at level ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InfeasiblePlacementError, ValidationError


@dataclass(frozen=True)
class TreeTopology:
    """A regular tree: every node at level ``k - 1`` has ``a_k`` children."""

    degrees: tuple[int, ...]
    node_counts: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        degrees = tuple(self.degrees)
        if not degrees:
            raise ValidationError("a tree needs at least one level")
        for k, a in enumerate(degrees, start=1):
            if isinstance(a, bool) or int(a) != a:
                raise ValidationError(f"level {k}: degree must be an integer, got {a!r}")
            if a < 2:
                raise ValidationError(f"level {k}: degree must be >= 2, got {a}")
        degrees = tuple(int(a) for a in degrees)
        counts = []
        n = 1
        for a in degrees:
            n *= a
            counts.append(n)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "node_counts", tuple(counts))

    @property
    def depth(self) -> int:
        return len(self.degrees)

    @property
    def total_nodes(self) -> int:
        return sum(self.node_counts)

    def nodes_at(self, level: int) -> int:
        self.check_level(level)
        return self.node_counts[level - 1]

    def check_level(self, level: int) -> None:
        if not 1 <= level <= self.depth:
            raise ValidationError(f"level {level} outside 1..{self.depth}")

    def parent(self, level: int, index: int) -> int:
        """Index of the parent (at ``level - 1``) of node ``index`` at ``level``."""
        if level <= 1:
            raise ValidationError("level-1 nodes report directly to the fusion center")
        return index // self.degrees[level - 1]

    def ancestors(self, level: int, index: int) -> list[tuple[int, int]]:
        """``(level, index)`` of every ancestor, nearest first, excluding the FC."""
        out = []
        while level > 1:
            index = self.parent(level, index)
            level -= 1
            out.append((level, index))
        return out

    def min_level_ratio(self) -> int | None:
        """``min_k N_{k+1} / N_k``, or None for a single-level tree."""
        if self.depth == 1:
            return None
        return min(self.degrees[1:])

    def replicate(self, copies: int) -> TreeTopology:
        """The forest of ``copies`` independent copies of this tree under one FC."""
        if copies < 1:
            raise ValidationError("copies must be >= 1")
        if copies == 1:
            return self
        return TreeTopology((self.degrees[0] * copies,) + self.degrees[1:])


def new_regular_tree(degrees: Sequence[int]) -> TreeTopology:
    return TreeTopology(tuple(degrees))


@dataclass(frozen=True)
class AttackConfig:
    """Number of Byzantines per level, ``B_1 .. B_K``, for a given topology.

    Only the per-level bound ``0 <= B_k <= N_k`` is enforced at construction;
    configurations that cannot be placed without overlap are still useful for
    exhaustive payoff tables. ``non_overlapping`` tells the two apart.
    """

    topology: TreeTopology
    byzantine_counts: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(self.byzantine_counts)
        if len(counts) != self.topology.depth:
            raise ValidationError(
                f"attack config has {len(counts)} levels, topology has {self.topology.depth}"
            )
        for k, (b, n) in enumerate(zip(counts, self.topology.node_counts), start=1):
            if isinstance(b, bool) or int(b) != b:
                raise ValidationError(f"level {k}: Byzantine count must be an integer, got {b!r}")
            if not 0 <= b <= n:
                raise ValidationError(f"level {k}: Byzantine count {b} outside 0..{n}")
        object.__setattr__(self, "byzantine_counts", tuple(int(b) for b in counts))

    @classmethod
    def none(cls, topology: TreeTopology) -> AttackConfig:
        return cls(topology, (0,) * topology.depth)

    @property
    def depth(self) -> int:
        return self.topology.depth

    @property
    def alphas(self) -> tuple[Fraction, ...]:
        """Exact per-level fractions ``alpha_k = B_k / N_k``."""
        return tuple(
            Fraction(b, n) for b, n in zip(self.byzantine_counts, self.topology.node_counts)
        )

    def coverages(self) -> tuple[Fraction, ...]:
        """Cumulative coverage ``t_k`` for every level."""
        out = []
        t = Fraction(0)
        for a in self.alphas:
            t += a
            out.append(t)
        return tuple(out)

    @property
    def non_overlapping(self) -> bool:
        return all(t <= 1 for t in self.coverages())

    def total_cost(self, costs: Sequence) -> Fraction:
        return sum((Fraction(c) * b for c, b in zip(costs, self.byzantine_counts)), Fraction(0))


def _check_pair(topology: TreeTopology, config: AttackConfig, level: int) -> None:
    if config.topology != topology:
        raise ValidationError("attack config was built for a different topology")
    topology.check_level(level)


def coverage_fraction(topology: TreeTopology, config: AttackConfig, level: int) -> Fraction:
    """Fraction of level-``level`` decisions that pass through a Byzantine."""
    _check_pair(topology, config, level)
    return config.coverages()[level - 1]


def corrupted_path_count(topology: TreeTopology, config: AttackConfig, level: int) -> int:
    """Number of level-``level`` to FC paths containing a Byzantine."""
    _check_pair(topology, config, level)
    n_k = topology.node_counts[level - 1]
    return sum(
        b * (n_k // n_i)
        for b, n_i in zip(config.byzantine_counts[:level], topology.node_counts[:level])
    )


@dataclass(frozen=True)
class AttackPlacement:
    """Concrete Byzantine node indices at each level."""

    topology: TreeTopology
    byzantines: tuple[frozenset[int], ...]

    def __post_init__(self) -> None:
        marks = tuple(frozenset(int(i) for i in s) for s in self.byzantines)
        if len(marks) != self.topology.depth:
            raise ValidationError("placement depth does not match topology")
        for k, s in enumerate(marks, start=1):
            n = self.topology.node_counts[k - 1]
            bad = [i for i in s if not 0 <= i < n]
            if bad:
                raise ValidationError(f"level {k}: node indices {sorted(bad)} outside 0..{n - 1}")
        object.__setattr__(self, "byzantines", marks)
        covered = self.covering_levels()
        for k, s in enumerate(marks, start=1):
            for i in s:
                if covered[k - 1][i] != k:
                    raise InfeasiblePlacementError(
                        f"level {k} node {i} has a Byzantine ancestor at level {covered[k - 1][i]}"
                    )

    @classmethod
    def honest(cls, topology: TreeTopology) -> AttackPlacement:
        return cls(topology, tuple(frozenset() for _ in topology.node_counts))

    def counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.byzantines)

    def config(self) -> AttackConfig:
        return AttackConfig(self.topology, self.counts())

    def is_byzantine(self, level: int, index: int) -> bool:
        return index in self.byzantines[level - 1]

    def covering_levels(self) -> list[np.ndarray]:
        """Per level, the level of the Byzantine on each node's path (0 if none).

        When a path holds several Byzantines the shallowest one is reported;
        valid placements never do.
        """
        out = []
        prev = None
        for k, a in enumerate(self.topology.degrees, start=1):
            n = self.topology.node_counts[k - 1]
            cov = np.zeros(n, dtype=np.int64) if prev is None else prev[np.arange(n) // a]
            marks = np.fromiter(self.byzantines[k - 1], dtype=np.int64)
            if marks.size:
                fresh = marks[cov[marks] == 0]
                cov = cov.copy()
                cov[fresh] = k
            out.append(cov)
            prev = cov
        return out


def sample_placement(
    topology: TreeTopology, config: AttackConfig, seed: int
) -> AttackPlacement:
    """Place ``config`` on the tree at random, top-down, avoiding covered subtrees."""
    _check_pair(topology, config, 1)
    rng = np.random.default_rng(seed)
    marks = []
    covered = None
    for k, (a, n, b) in enumerate(
        zip(topology.degrees, topology.node_counts, config.byzantine_counts), start=1
    ):
        covered = np.zeros(n, dtype=bool) if covered is None else covered[np.arange(n) // a]
        free = np.flatnonzero(~covered)
        if b > free.size:
            raise InfeasiblePlacementError(
                f"level {k}: {b} Byzantines requested but only {free.size} "
                "nodes have no Byzantine ancestor"
            )
        chosen = np.sort(rng.choice(free, size=b, replace=False)) if b else free[:0]
        covered = covered.copy()
        covered[chosen] = True
        marks.append(frozenset(int(i) for i in chosen))
    return AttackPlacement(topology, tuple(marks))
