"""Monte Carlo decision fusion over a tree with Byzantine relays.

Every node draws a local decision, Byzantines flip their own and every
relayed bit, and the FC runs the weighted count test built from the
per-level received-bit distributions it assumes.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attack import FlipStrategy, OperatingPoint, level_channels
from .divergence import fusion_weights, min_kld, optimal_attack_strategy
from .errors import DegenerateStatisticWarning, ValidationError
from .topology import AttackConfig, AttackPlacement, TreeTopology, sample_placement

DEFAULT_CHUNK = 20_000


@dataclass(frozen=True)
class TrialRecord:
    hypothesis: int
    ones: tuple[int, ...]
    statistic: float
    decision: int


@dataclass(frozen=True)
class LevelRates:
    """Empirical one-rate of received bits from one level against the channel model."""

    level: int
    rate_h0: float
    stderr_h0: float
    pi10: float
    rate_h1: float
    stderr_h1: float
    pi11: float

    @property
    def delta_h0(self) -> float:
        return self.rate_h0 - self.pi10

    @property
    def delta_h1(self) -> float:
        return self.rate_h1 - self.pi11


@dataclass(frozen=True)
class FusionReport:
    delta: float
    trials: int
    log_threshold: float
    p_false_alarm: float
    p_false_alarm_ci: float
    p_miss: float
    p_miss_ci: float
    level_rates: tuple[LevelRates, ...]
    degenerate: bool


@dataclass(frozen=True)
class _Scenario:
    topology: TreeTopology
    flip10: tuple[np.ndarray, ...]
    flip01: tuple[np.ndarray, ...]
    operating_points: tuple[OperatingPoint, ...]
    weights: np.ndarray  # shape (K, 2): a1, a0 per level


def _flip_tables(placement: AttackPlacement, strategy: FlipStrategy):
    cover = placement.covering_levels()
    p10 = np.array([0.0] + [float(a) for a, _ in strategy.pairs])
    p01 = np.array([0.0] + [float(b) for _, b in strategy.pairs])
    return tuple(p10[c] for c in cover), tuple(p01[c] for c in cover)


def _scenario(
    topology: TreeTopology,
    placement: AttackPlacement,
    strategy: FlipStrategy,
    operating_points: Sequence[OperatingPoint],
    assumed_config: AttackConfig | None,
    assumed_strategy: FlipStrategy | None,
) -> _Scenario:
    if placement.topology != topology:
        raise ValidationError("placement was built for a different topology")
    if strategy.depth != topology.depth:
        raise ValidationError("strategy depth does not match the topology")
    if len(operating_points) != topology.depth:
        raise ValidationError("one operating point per level is required")
    config = assumed_config if assumed_config is not None else placement.config()
    belief = assumed_strategy if assumed_strategy is not None else strategy
    channels = level_channels(config, belief, operating_points)
    weights = np.array([fusion_weights(ch) for ch in channels], dtype=float)
    f10, f01 = _flip_tables(placement, strategy)
    return _Scenario(topology, f10, f01, tuple(operating_points), weights)


def _received_ones(scn: _Scenario, hyp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Counts ``s_k`` of received ones per level for a batch of hypotheses."""
    n = hyp.size
    ones = np.empty((n, scn.topology.depth), dtype=np.int64)
    h = hyp[:, None].astype(bool)
    for k, op in enumerate(scn.operating_points):
        width = scn.topology.node_counts[k]
        p = np.where(h, op.p_detect, op.p_false_alarm)
        bits = rng.random((n, width)) < p
        f10, f01 = scn.flip10[k], scn.flip01[k]
        if f10.any() or f01.any():
            u = rng.random((n, width))
            bits ^= np.where(bits, u < f01, u < f10)
        ones[:, k] = np.count_nonzero(bits, axis=1)
    return ones


def _statistic(scn: _Scenario, ones: np.ndarray) -> np.ndarray:
    zeros = np.asarray(scn.topology.node_counts)[None, :] - ones
    a1 = scn.weights[:, 0][None, :]
    a0 = scn.weights[:, 1][None, :]
    # a zero count contributes nothing, even against an infinite weight
    with np.errstate(invalid="ignore"):
        terms = np.where(ones == 0, 0.0, a1 * ones) + np.where(zeros == 0, 0.0, a0 * zeros)
    return terms.sum(axis=1)


def run_trial(
    topology: TreeTopology,
    placement: AttackPlacement,
    strategy: FlipStrategy,
    operating_points: Sequence[OperatingPoint],
    hypothesis: int,
    seed: int,
    log_threshold: float = 0.0,
    assumed_config: AttackConfig | None = None,
    assumed_strategy: FlipStrategy | None = None,
) -> TrialRecord:
    """One decision round; the FC decides 1 when the statistic exceeds ``log_threshold``."""
    if hypothesis not in (0, 1):
        raise ValidationError("hypothesis must be 0 or 1")
    scn = _scenario(topology, placement, strategy, operating_points, assumed_config, assumed_strategy)
    rng = np.random.default_rng(seed)
    ones = _received_ones(scn, np.array([hypothesis]), rng)
    stat = float(_statistic(scn, ones)[0])
    return TrialRecord(
        hypothesis=hypothesis,
        ones=tuple(int(x) for x in ones[0]),
        statistic=stat,
        decision=int(stat > log_threshold),
    )


def _chunks(trials: int, chunk: int) -> list[int]:
    full, rest = divmod(trials, chunk)
    return [chunk] * full + ([rest] if rest else [])


def _simulate(
    scn: _Scenario, hypothesis: int, trials: int, seed: np.random.SeedSequence,
    workers: int, chunk: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Statistics and level-wise one counts (summed) for ``trials`` rounds under one hypothesis."""
    sizes = _chunks(trials, chunk)
    seeds = seed.spawn(len(sizes))

    def work(job):
        size, s = job
        rng = np.random.default_rng(s)
        ones = _received_ones(scn, np.full(size, hypothesis), rng)
        return _statistic(scn, ones), ones.sum(axis=0)

    jobs = list(zip(sizes, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, jobs))
    else:
        parts = [work(j) for j in jobs]
    stats_ = np.concatenate([p[0] for p in parts])
    totals = np.sum([p[1] for p in parts], axis=0)
    return stats_, totals


def _quantile_threshold(values: np.ndarray, delta: float) -> float:
    ordered = np.sort(values)
    idx = max(math.ceil((1.0 - delta) * ordered.size) - 1, 0)
    return float(ordered[idx])


def _check_delta(delta: float, trials: int) -> None:
    if not 0 < delta <= 1:
        raise ValidationError("delta must lie in (0, 1]")
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if delta * trials < 100:
        warnings.warn(
            f"delta * trials = {delta * trials:.3g} < 100; the quantile estimate is noisy",
            RuntimeWarning,
            stacklevel=3,
        )


def _warn_degenerate(values: np.ndarray) -> bool:
    if values.size and np.all(values == values[0]):
        warnings.warn(
            "fusion statistic is constant under H0; the threshold carries no information",
            DegenerateStatisticWarning,
            stacklevel=3,
        )
        return True
    return False


def calibrate_threshold(
    topology: TreeTopology,
    placement: AttackPlacement,
    strategy: FlipStrategy,
    operating_points: Sequence[OperatingPoint],
    delta: float,
    trials: int,
    seed: int,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """Empirical ``(1 - delta)`` quantile of the statistic under H0 (no randomization)."""
    _check_delta(delta, trials)
    scn = _scenario(topology, placement, strategy, operating_points, None, None)
    values, _ = _simulate(scn, 0, trials, np.random.SeedSequence(seed), workers, chunk)
    _warn_degenerate(values)
    return _quantile_threshold(values, delta)


def _rate_ci(hits: int, n: int) -> tuple[float, float]:
    rate = hits / n
    return rate, 3.0 * math.sqrt(rate * (1.0 - rate) / n)


def run_fusion_experiment(
    topology: TreeTopology,
    placement: AttackPlacement,
    strategy: FlipStrategy,
    operating_points: Sequence[OperatingPoint],
    delta: float,
    trials: int,
    seed: int,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
    assumed_config: AttackConfig | None = None,
    assumed_strategy: FlipStrategy | None = None,
) -> FusionReport:
    """Calibrate on H0, then measure false alarms and misses on fresh rounds.

    Confidence half-widths are three binomial standard errors.
    """
    _check_delta(delta, trials)
    scn = _scenario(topology, placement, strategy, operating_points, assumed_config, assumed_strategy)
    calib, fresh0, fresh1 = np.random.SeedSequence(seed).spawn(3)
    cal_values, _ = _simulate(scn, 0, trials, calib, workers, chunk)
    degenerate = _warn_degenerate(cal_values)
    threshold = _quantile_threshold(cal_values, delta)
    h0_values, h0_ones = _simulate(scn, 0, trials, fresh0, workers, chunk)
    h1_values, h1_ones = _simulate(scn, 1, trials, fresh1, workers, chunk)
    pf, pf_ci = _rate_ci(int(np.count_nonzero(h0_values > threshold)), trials)
    pm, pm_ci = _rate_ci(int(np.count_nonzero(h1_values <= threshold)), trials)

    channels = level_channels(placement.config(), strategy, operating_points)
    rates = []
    for k, (ch, n_k) in enumerate(zip(channels, topology.node_counts), start=1):
        bits = trials * n_k
        r0 = h0_ones[k - 1] / bits
        r1 = h1_ones[k - 1] / bits
        rates.append(
            LevelRates(
                level=k,
                rate_h0=float(r0),
                stderr_h0=math.sqrt(ch.pi10 * (1 - ch.pi10) / bits),
                pi10=ch.pi10,
                rate_h1=float(r1),
                stderr_h1=math.sqrt(ch.pi11 * (1 - ch.pi11) / bits),
                pi11=ch.pi11,
            )
        )
    return FusionReport(
        delta=delta,
        trials=trials,
        log_threshold=threshold,
        p_false_alarm=pf,
        p_false_alarm_ci=pf_ci,
        p_miss=pm,
        p_miss_ci=pm_ci,
        level_rates=tuple(rates),
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class ReplicationPoint:
    copies: int
    divergence: float
    p_miss: float
    neg_log_p_miss: float


@dataclass(frozen=True)
class ReplicationFit:
    points: tuple[ReplicationPoint, ...]
    slope: float
    intercept: float
    base_divergence: float

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.base_divergence) / self.base_divergence


def replication_slope(
    topology: TreeTopology,
    config: AttackConfig,
    operating_points: Sequence[OperatingPoint],
    copies: Sequence[int] = (1, 2, 3, 4),
    delta: float = 0.5,
    trials: int = 200_000,
    seed: int = 0,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> ReplicationFit:
    """Fit ``-ln P_M`` against the number of independent tree copies fused together.

    Byzantines attack with the optimal strategy; each replica carries the
    same per-level counts, so coverages and the base divergence are unchanged.
    """
    strategy = optimal_attack_strategy(config.coverages())
    base_d = min_kld(topology, config, operating_points).total
    seeds = np.random.SeedSequence(seed).spawn(len(copies))
    points = []
    for m, s in zip(copies, seeds):
        forest = topology.replicate(m)
        counts = tuple(b * m for b in config.byzantine_counts)
        forest_config = AttackConfig(forest, counts)
        place_seed, run_seed = (int(x) for x in s.generate_state(2))
        placement = sample_placement(forest, forest_config, place_seed)
        report = run_fusion_experiment(
            forest, placement, strategy, operating_points, delta, trials, run_seed,
            workers=workers, chunk=chunk,
        )
        if report.p_miss == 0:
            raise ValidationError(f"no misses observed at {m} copies; raise trials")
        points.append(
            ReplicationPoint(m, min_kld(forest, forest_config, operating_points).total,
                             report.p_miss, -math.log(report.p_miss))
        )
    x = np.array([p.copies for p in points], dtype=float)
    y = np.array([p.neg_log_p_miss for p in points])
    slope, intercept = np.polyfit(x, y, 1)
    return ReplicationFit(tuple(points), float(slope), float(intercept), base_d)
