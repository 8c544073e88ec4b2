"""KL-divergence error exponents under attack, optimal attacks, and detector design.

All divergences are in nats and follow the direction ``KL(H0 || H1)`` of the
received-bit distributions, the missed-detection exponent at the FC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from .attack import (
    FlipStrategy,
    LevelChannel,
    OperatingPoint,
    level_channel,
    level_channels,
)
from .errors import ValidationError
from .topology import AttackConfig, TreeTopology

INFINITE_DIVERGENCE = math.inf


def _xlog_ratio(x: float, y: float) -> float:
    if x == 0:
        return 0.0
    if y == 0:
        return INFINITE_DIVERGENCE
    return x * math.log(x / y)


def binary_kld(p: float, q: float) -> float:
    """``KL(Bern(p) || Bern(q))``; infinite when ``q`` hits a boundary that ``p`` does not."""
    if p == q:
        return 0.0
    return _xlog_ratio(p, q) + _xlog_ratio(1.0 - p, 1.0 - q)


def _binary_kld_array(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = special.rel_entr(p, q) + special.rel_entr(1.0 - p, 1.0 - q)
    return np.where(p == q, 0.0, out)


def level_kld(channel: LevelChannel) -> float:
    return binary_kld(channel.pi10, channel.pi11)


@dataclass(frozen=True)
class KldReport:
    per_level: tuple[float, ...]
    total: float
    channels: tuple[LevelChannel, ...]


def total_kld(
    topology: TreeTopology,
    config: AttackConfig,
    strategy: FlipStrategy,
    operating_points: Sequence[OperatingPoint],
) -> KldReport:
    if config.topology != topology:
        raise ValidationError("attack config was built for a different topology")
    channels = level_channels(config, strategy, operating_points)
    per_level = tuple(level_kld(ch) for ch in channels)
    total = math.fsum(n * d for n, d in zip(topology.node_counts, per_level) if d)
    return KldReport(per_level=per_level, total=total, channels=tuple(channels))


def optimal_attack_strategy(coverages: Sequence) -> FlipStrategy:
    """Flip probabilities minimizing the divergence for the given cumulative coverages.

    Below half coverage every level always flips. From the first level whose
    coverage reaches one half, the strategy solves the blinding equation
    exactly: that level flips symmetrically just enough, deeper levels not at all.
    Fractions in give Fractions out.
    """
    pairs = []
    prev = Fraction(0) if all(isinstance(t, (int, Fraction)) for t in coverages) else 0.0
    blinded = False
    for k, t in enumerate(coverages, start=1):
        if t < prev or t < 0:
            raise ValidationError(f"coverage must be non-decreasing and >= 0 (level {k})")
        if blinded:
            pairs.append((0, 0))
        elif 2 * t < 1:
            pairs.append((1, 1))
        else:
            alpha = t - prev
            p = (1 - 2 * prev) / (2 * alpha)
            pairs.append((p, p))
            blinded = True
        prev = t
    return FlipStrategy(tuple(pairs))


def min_kld(
    topology: TreeTopology, config: AttackConfig, operating_points: Sequence[OperatingPoint]
) -> KldReport:
    """Divergence when the Byzantines play the optimal strategy for ``config``."""
    strategy = optimal_attack_strategy(config.coverages())
    return total_kld(topology, config, strategy, operating_points)


def _grid(resolution: int) -> np.ndarray:
    if resolution < 2:
        raise ValidationError("grid resolution must be >= 2")
    return np.linspace(0.0, 1.0, resolution)


def _pick_min(values: np.ndarray) -> tuple[int, int]:
    # Ties go to the larger p10, then the larger p01.
    best = values.min()
    rows, cols = np.nonzero(values == best)
    order = np.lexsort((cols, rows))
    i = order[-1]
    return int(rows[i]), int(cols[i])


def kld_surface(coverage: float, operating_point: OperatingPoint, resolution: int):
    """``D_k`` over a ``(p10, p01)`` grid with the same strategy at every level.

    Returns ``(grid, values)`` with ``values[i, j]`` at ``p10 = grid[i]``, ``p01 = grid[j]``.
    """
    g = _grid(resolution)
    t = float(coverage)
    b10 = t * g[:, None]
    b01 = t * g[None, :]
    s = 1.0 - b10 - b01
    pi10 = b10 + s * operating_point.p_false_alarm
    pi11 = b10 + s * operating_point.p_detect
    return g, _binary_kld_array(pi10, pi11)


def grid_min_level_kld(
    coverage: float, operating_point: OperatingPoint, resolution: int = 51
) -> tuple[tuple[float, float], float]:
    """Brute-force minimum of ``D_k`` over the flip grid at one coverage value."""
    g, values = kld_surface(coverage, operating_point, resolution)
    i, j = _pick_min(values)
    return (float(g[i]), float(g[j])), float(values[i, j])


def grid_min_kld(
    topology: TreeTopology,
    config: AttackConfig,
    operating_points: Sequence[OperatingPoint],
    resolution: int = 51,
) -> tuple[tuple[float, float], float]:
    """Brute-force minimum of the total divergence over a uniform flip strategy."""
    if len(operating_points) != topology.depth:
        raise ValidationError("one operating point per level is required")
    total = None
    for n, t, op in zip(topology.node_counts, config.coverages(), operating_points):
        _, values = kld_surface(t, op, resolution)
        total = n * values if total is None else total + n * values
    i, j = _pick_min(total)
    g = _grid(resolution)
    return (float(g[i]), float(g[j])), float(total[i, j])


def kld_vs_coverage(
    operating_point: OperatingPoint, coverage_grid: Sequence[float]
) -> list[tuple[float, float]]:
    """Minimum ``D_k`` as a function of coverage ``t`` on ``[0, 0.5)``."""
    out = []
    for t in coverage_grid:
        if not 0 <= t < 0.5:
            raise ValidationError(f"coverage {t} outside [0, 0.5)")
        b = float(t)
        s = 1.0 - 2.0 * b
        pi10 = b + s * operating_point.p_false_alarm
        pi11 = b + s * operating_point.p_detect
        out.append((float(t), binary_kld(pi10, pi11)))
    return out


def _with_separation(
    operating_points: Sequence[OperatingPoint], level: int, x: float
) -> list[OperatingPoint]:
    ops = list(operating_points)
    y = ops[level - 1].p_false_alarm
    ops[level - 1] = OperatingPoint(min(y + x, 1.0), y)
    return ops


def kld_partial_wrt_separation(
    topology: TreeTopology,
    config: AttackConfig,
    strategy: FlipStrategy,
    operating_points: Sequence[OperatingPoint],
    level: int,
    step: float = 1e-4,
) -> float:
    """Finite-difference ``dD/dx_k`` with ``x_k = P_d - P_fa`` at fixed ``P_fa``.

    Central differences where both neighbours are valid operating points,
    one-sided at the boundaries ``x = 0`` and ``P_d = 1``.
    """
    topology.check_level(level)
    if step <= 0:
        raise ValidationError("step must be positive")
    op = operating_points[level - 1]
    x = op.separation
    room_up = 1.0 - op.p_detect
    fits_down = x - step >= 0
    fits_up = step <= room_up + 1e-15
    if not (fits_down or fits_up):
        raise ValidationError(f"step {step} too large for operating point {op}")

    def d_at(xx: float) -> float:
        return total_kld(topology, config, strategy, _with_separation(operating_points, level, xx)).total

    if fits_down and fits_up:
        return (d_at(x + step) - d_at(x - step)) / (2 * step)
    if fits_up:
        return (d_at(x + step) - d_at(x)) / step
    return (d_at(x) - d_at(x - step)) / step


def kld_partial_closed_form(
    topology: TreeTopology,
    config: AttackConfig,
    strategy: FlipStrategy,
    operating_points: Sequence[OperatingPoint],
    level: int,
) -> float:
    """Analytic ``dD/dx_k = N_k s ((1 - pi10)/(1 - pi11) - pi10/pi11)``, ``s = 1 - beta01 - beta10``."""
    ch = level_channel(config, strategy, operating_points[level - 1], level)
    s = 1.0 - ch.beta01 - ch.beta10
    if s == 0:
        return 0.0
    n_k = topology.node_counts[level - 1]
    return n_k * s * ((1 - ch.pi10) / (1 - ch.pi11) - ch.pi10 / ch.pi11)


def _log_ratio(num: float, den: float) -> float:
    if num == den:
        return 0.0
    if den == 0:
        return math.inf
    if num == 0:
        return -math.inf
    return math.log(num / den)


def fusion_weights(channel: LevelChannel) -> tuple[float, float]:
    """Per-level weights ``(a1, a0)`` applied to counts of received ones and zeros."""
    a1 = _log_ratio(channel.pi11, channel.pi10)
    if channel.pi11 == 1.0 or channel.pi10 == 1.0:
        a0 = _log_ratio(1.0 - channel.pi11, 1.0 - channel.pi10)
    else:
        # log1p keeps the sign when both probabilities are tiny
        a0 = math.log1p(-channel.pi11) - math.log1p(-channel.pi10)
    return a1, a0


@dataclass(frozen=True)
class GaussianSensorModel:
    """Unit-variance Gaussian observation, mean 0 under H0 and ``amplitude`` under H1.

    ``threshold`` is the likelihood-ratio threshold of the local test.
    """

    amplitude: float
    threshold: float

    def __post_init__(self) -> None:
        if not self.amplitude > 0:
            raise ValidationError("amplitude must be positive")
        if not self.threshold > 0:
            raise ValidationError("likelihood-ratio threshold must be positive")

    @property
    def observation_cut(self) -> float:
        """Observation-domain cut equivalent to the likelihood-ratio threshold."""
        return math.log(self.threshold) / self.amplitude + self.amplitude / 2.0


def gaussian_roc_point(model: GaussianSensorModel) -> OperatingPoint:
    tau = model.observation_cut
    return OperatingPoint(
        p_detect=float(stats.norm.sf(tau - model.amplitude)),
        p_false_alarm=float(stats.norm.sf(tau)),
    )


def roc_point_at_false_alarm(amplitude: float, p_false_alarm: float) -> OperatingPoint:
    """Sweep the likelihood-ratio threshold until the test meets ``p_false_alarm``."""
    if not 0 < p_false_alarm < 1:
        raise ValidationError("p_false_alarm must lie in (0, 1)")

    def gap(log_lam: float) -> float:
        return gaussian_roc_point(GaussianSensorModel(amplitude, math.exp(log_lam))).p_false_alarm - p_false_alarm

    lo, hi = -1.0, 1.0
    while gap(lo) < 0:
        lo *= 2
    while gap(hi) > 0:
        hi *= 2
    log_lam = optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return gaussian_roc_point(GaussianSensorModel(amplitude, math.exp(log_lam)))


def max_detection_interval_tests(
    amplitude: float, p_false_alarm: float, n_grid: int = 4001, span: float = 10.0
) -> tuple[float, float]:
    """Best ``P_d`` among interval detectors ``u < y < v`` with the given false alarm.

    The family is parametrized by the lower edge ``u``; the upper edge follows
    from the false-alarm constraint and reaches ``+inf`` at the family's last
    member, which is the likelihood-ratio test. Returns ``(P_d, u)``.
    """
    u_max = float(stats.norm.isf(p_false_alarm))
    u = np.linspace(u_max - span, u_max, n_grid)
    lower_mass = stats.norm.cdf(u)
    upper = np.minimum(lower_mass + p_false_alarm, 1.0)
    upper[-1] = 1.0
    v = stats.norm.ppf(upper)
    p_d = stats.norm.cdf(v - amplitude) - stats.norm.cdf(u - amplitude)
    i = int(np.argmax(p_d))
    return float(p_d[i]), float(u[i])
