"""Falsification channel: flip aggregates, received-bit distributions, blinding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Sequence

from .errors import ValidationError
from .topology import AttackConfig, TreeTopology


def _check_prob(name: str, p) -> None:
    if not 0 <= p <= 1 or (isinstance(p, float) and math.isnan(p)):
        raise ValidationError(f"{name} must lie in [0, 1], got {p!r}")


@dataclass(frozen=True)
class OperatingPoint:
    """Local detector performance ``(P_d, P_fa)`` of the nodes at one level."""

    p_detect: float
    p_false_alarm: float

    def __post_init__(self) -> None:
        _check_prob("p_detect", self.p_detect)
        _check_prob("p_false_alarm", self.p_false_alarm)
        # P_d == P_fa is kept legal: it is the uninformative boundary of ROC sweeps.
        if self.p_false_alarm > self.p_detect:
            raise ValidationError(
                f"p_false_alarm {self.p_false_alarm} exceeds p_detect {self.p_detect}"
            )

    @property
    def separation(self) -> float:
        return self.p_detect - self.p_false_alarm

    def p_one(self, hypothesis: int) -> float:
        """Probability the local decision is 1 under ``hypothesis``."""
        return self.p_detect if hypothesis else self.p_false_alarm


@dataclass(frozen=True)
class FlipStrategy:
    """Per-level flip probabilities ``(P_{1,0}, P_{0,1})`` of Byzantine nodes.

    ``p10`` is the probability a 0 is sent as 1, ``p01`` that a 1 is sent as 0.
    Entries may be ints or Fractions to keep blinding checks exact.
    """

    pairs: tuple[tuple, ...]

    def __post_init__(self) -> None:
        pairs = tuple((p10, p01) for p10, p01 in self.pairs)
        for k, (p10, p01) in enumerate(pairs, start=1):
            _check_prob(f"level {k} p10", p10)
            _check_prob(f"level {k} p01", p01)
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def honest(cls, depth: int) -> FlipStrategy:
        return cls(((0, 0),) * depth)

    @classmethod
    def always_flip(cls, depth: int) -> FlipStrategy:
        return cls(((1, 1),) * depth)

    @classmethod
    def uniform(cls, depth: int, p10, p01) -> FlipStrategy:
        return cls(((p10, p01),) * depth)

    @property
    def depth(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class LevelChannel:
    """Received-bit distribution for decisions originating at one level."""

    pi10: float
    pi11: float
    beta10: float
    beta01: float


def _check_shapes(config: AttackConfig, strategy: FlipStrategy, level: int) -> None:
    if strategy.depth != config.depth:
        raise ValidationError(
            f"strategy has {strategy.depth} levels, attack config has {config.depth}"
        )
    config.topology.check_level(level)


def beta_aggregates(config: AttackConfig, strategy: FlipStrategy, level: int) -> tuple:
    """``(beta10, beta01)`` for decisions from ``level``.

    Exact (Fraction) when the strategy entries are rational, float otherwise.
    """
    _check_shapes(config, strategy, level)
    b10 = Fraction(0)
    b01 = Fraction(0)
    for alpha, (p10, p01) in zip(config.alphas[:level], strategy.pairs[:level]):
        b10 += alpha * p10
        b01 += alpha * p01
    return b10, b01


def _sensitivity(b10, b01):
    """``1 - beta10 - beta01``: how strongly the received bit tracks the local one."""
    if isinstance(b10, Rational) and isinstance(b01, Rational):
        return 1 - Fraction(b10) - Fraction(b01)
    return 1.0 - float(b10) - float(b01)


def level_channel(
    config: AttackConfig, strategy: FlipStrategy, operating_point: OperatingPoint, level: int
) -> LevelChannel:
    b10, b01 = beta_aggregates(config, strategy, level)
    if b10 > 1 or b01 > 1:
        raise ValidationError(
            f"level {level}: flip aggregates ({float(b10)}, {float(b01)}) exceed 1; "
            "the attack config overlaps"
        )
    # pi = beta10 + (1 - beta10 - beta01) * P, the rearranged channel equation;
    # an exactly zero sensitivity then gives exactly equal pi10 and pi11.
    s = float(_sensitivity(b10, b01))
    base = float(b10)
    pi10 = base + s * operating_point.p_false_alarm
    pi11 = base + s * operating_point.p_detect
    return LevelChannel(
        pi10=min(max(pi10, 0.0), 1.0),
        pi11=min(max(pi11, 0.0), 1.0),
        beta10=float(b10),
        beta01=float(b01),
    )


def level_channels(
    config: AttackConfig,
    strategy: FlipStrategy,
    operating_points: Sequence[OperatingPoint],
) -> list[LevelChannel]:
    if len(operating_points) != config.depth:
        raise ValidationError(
            f"{len(operating_points)} operating points for a {config.depth}-level tree"
        )
    return [
        level_channel(config, strategy, op, k)
        for k, op in enumerate(operating_points, start=1)
    ]


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def is_blinding(config: AttackConfig, strategy: FlipStrategy) -> bool:
    """True iff ``sum_{j<=k} alpha_j (p10_j + p01_j) == 1`` at every level, exactly."""
    _check_shapes(config, strategy, 1)
    acc = Fraction(0)
    for alpha, (p10, p01) in zip(config.alphas, strategy.pairs):
        acc += alpha * (_as_fraction(p10) + _as_fraction(p01))
        if acc != 1:
            return False
    return True


def min_byzantines_to_blind(topology: TreeTopology) -> AttackConfig:
    n1 = topology.node_counts[0]
    return AttackConfig(topology, (-(-n1 // 2),) + (0,) * (topology.depth - 1))
