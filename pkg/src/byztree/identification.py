"""Reputation-based Byzantine identification against a trusted anchor node.

The FC compares every node's reported decisions over a window of ``T`` time
steps with the anchor's and flags a node whose Hamming distance exceeds the
level threshold, testing levels top-down and skipping the subtrees of
flagged nodes.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .attack import OperatingPoint
from .errors import ApproximationDomainError, NormalApproximationWarning, ValidationError
from .topology import AttackPlacement, TreeTopology

HYPOTHESIS_MODES = ("window", "step")
ANCHOR_MODES = ("shared", "independent")


@dataclass(frozen=True)
class IdentificationParams:
    """Inputs of the identification scheme.

    ``hypothesis_mode``: ``"window"`` keeps one hypothesis for the whole window,
    ``"step"`` redraws it at every time step. ``anchor_mode``: ``"shared"``
    compares every node with the same anchor stream; ``"independent"`` gives
    each comparison a fresh anchor stream, which is the model under which the
    distances of a node and its ancestors are independent.
    """

    anchor: OperatingPoint
    node_points: tuple[OperatingPoint, ...]
    deltas: tuple[float, ...]
    window: int
    prior0: float = 0.5
    flip: tuple[float, float] = (1.0, 1.0)
    hypothesis_mode: str = "window"
    anchor_mode: str = "shared"

    def __post_init__(self) -> None:
        object.__setattr__(self, "node_points", tuple(self.node_points))
        object.__setattr__(self, "deltas", tuple(self.deltas))
        object.__setattr__(self, "flip", tuple(self.flip))
        if len(self.deltas) != len(self.node_points):
            raise ValidationError("one delta per level is required")
        for k, d in enumerate(self.deltas, start=1):
            if not 0 < d < 0.5:
                raise ValidationError(f"level {k}: delta {d} outside (0, 0.5)")
        if isinstance(self.window, bool) or int(self.window) != self.window or self.window < 0:
            raise ValidationError("window must be a non-negative integer")
        if not 0 <= self.prior0 <= 1:
            raise ValidationError("prior0 must lie in [0, 1]")
        if len(self.flip) != 2 or not all(0 <= p <= 1 for p in self.flip):
            raise ValidationError("flip must be a pair of probabilities")
        if self.hypothesis_mode not in HYPOTHESIS_MODES:
            raise ValidationError(f"hypothesis_mode must be one of {HYPOTHESIS_MODES}")
        if self.anchor_mode not in ANCHOR_MODES:
            raise ValidationError(f"anchor_mode must be one of {ANCHOR_MODES}")

    @property
    def depth(self) -> int:
        return len(self.node_points)

    @property
    def priors(self) -> tuple[float, float]:
        return self.prior0, 1.0 - self.prior0

    def with_window(self, window: int) -> IdentificationParams:
        return IdentificationParams(
            anchor=self.anchor,
            node_points=self.node_points,
            deltas=self.deltas,
            window=window,
            prior0=self.prior0,
            flip=self.flip,
            hypothesis_mode=self.hypothesis_mode,
            anchor_mode=self.anchor_mode,
        )


def _node_point(params: IdentificationParams, level: int) -> OperatingPoint:
    if not 1 <= level <= params.depth:
        raise ValidationError(f"level {level} outside 1..{params.depth}")
    return params.node_points[level - 1]


def _byzantine_one_prob(p: float, flip: tuple[float, float]) -> float:
    p10, p01 = flip
    return p * (1.0 - p01) + (1.0 - p) * p10


def p_diff_honest(params: IdentificationParams, level: int, hypothesis: int) -> float:
    pa = params.anchor.p_one(hypothesis)
    p = _node_point(params, level).p_one(hypothesis)
    return p + pa - 2.0 * p * pa


def p_diff_byzantine(params: IdentificationParams, level: int, hypothesis: int) -> float:
    """Per-step disagreement of a Byzantine with the anchor.

    For always-flip Byzantines this is ``pa p + (1 - pa)(1 - p)``.
    """
    pa = params.anchor.p_one(hypothesis)
    q = _byzantine_one_prob(_node_point(params, level).p_one(hypothesis), params.flip)
    return pa * (1.0 - q) + (1.0 - pa) * q


def check_separation(params: IdentificationParams) -> None:
    for k in range(1, params.depth + 1):
        honest = max(p_diff_honest(params, k, l) for l in (0, 1))
        byz = min(p_diff_byzantine(params, k, l) for l in (0, 1))
        if not honest < byz:
            raise ValidationError(
                f"level {k}: honest disagreement {honest:.4g} is not below "
                f"Byzantine disagreement {byz:.4g}; thresholds cannot separate them"
            )


def compute_threshold(params: IdentificationParams, level: int) -> float:
    """Distance threshold holding the worst-hypothesis honest isolation at ``delta_k``."""
    z = float(stats.norm.isf(params.deltas[level - 1]))
    t = params.window
    candidates = []
    for l in (0, 1):
        p = p_diff_honest(params, level, l)
        candidates.append(z * math.sqrt(t * p * (1.0 - p)) + t * p)
    return max(candidates)


def compute_thresholds(params: IdentificationParams) -> tuple[float, ...]:
    check_separation(params)
    return tuple(compute_threshold(params, k) for k in range(1, params.depth + 1))


def _check_thresholds(params: IdentificationParams, thresholds: Sequence[float], level: int) -> None:
    _node_point(params, level)
    if len(thresholds) < level:
        raise ValidationError(f"thresholds for levels 1..{level} are required")


def p_iso_exact(
    params: IdentificationParams, thresholds: Sequence[float], level: int
) -> float:
    """Byzantine isolation probability from exact binomial sums.

    The Byzantine's distance must exceed ``floor(eta_k)`` while every honest
    ancestor stays at or below its own integer threshold, with the distances
    taken as independent given the hypothesis.
    """
    _check_thresholds(params, thresholds, level)
    t = params.window
    total = 0.0
    for prior, l in zip(params.priors, (0, 1)):
        if prior == 0:
            continue
        term = stats.binom.sf(math.floor(thresholds[level - 1]), t, p_diff_byzantine(params, level, l))
        for m in range(1, level):
            term *= stats.binom.cdf(math.floor(thresholds[m - 1]), t, p_diff_honest(params, m, l))
        total += prior * term
    return float(total)


def _mismatch_given_anchor_ones(
    c: np.ndarray, t: int, q: float, threshold: float, tail: bool
) -> np.ndarray:
    # distance = Bin(c, P(node != 1)) + Bin(t - c, P(node != 0)), exact convolution
    eta = math.floor(threshold)
    k = np.arange(t + 1)
    out = np.empty(c.size)
    for idx, ci in enumerate(c):
        left = stats.binom.pmf(k[: ci + 1], ci, 1.0 - q)
        right = stats.binom.pmf(k[: t - ci + 1], t - ci, q)
        dist = np.convolve(left, right)
        out[idx] = dist[eta + 1:].sum() if tail else dist[: eta + 1].sum()
    return out


def p_iso_shared_anchor(
    params: IdentificationParams, thresholds: Sequence[float], level: int
) -> float:
    """Byzantine isolation probability when all tests share one anchor stream.

    Exact under the window hypothesis model: conditions on the number of
    anchor ones, given which the node distances are independent.
    """
    _check_thresholds(params, thresholds, level)
    t = params.window
    c = np.arange(t + 1)
    total = 0.0
    for prior, l in zip(params.priors, (0, 1)):
        if prior == 0:
            continue
        weights = stats.binom.pmf(c, t, params.anchor.p_one(l))
        q_byz = _byzantine_one_prob(_node_point(params, level).p_one(l), params.flip)
        term = _mismatch_given_anchor_ones(c, t, q_byz, thresholds[level - 1], tail=True)
        for m in range(1, level):
            q = params.node_points[m - 1].p_one(l)
            term = term * _mismatch_given_anchor_ones(c, t, q, thresholds[m - 1], tail=False)
        total += prior * float(np.dot(weights, term))
    return total


def honest_isolation_exact(
    params: IdentificationParams, thresholds: Sequence[float], level: int
) -> float:
    """Probability an honest node at ``level`` with honest ancestors is flagged."""
    _check_thresholds(params, thresholds, level)
    t = params.window
    total = 0.0
    for prior, l in zip(params.priors, (0, 1)):
        term = stats.binom.sf(math.floor(thresholds[level - 1]), t, p_diff_honest(params, level, l))
        for m in range(1, level):
            term *= stats.binom.cdf(math.floor(thresholds[m - 1]), t, p_diff_honest(params, m, l))
        total += prior * term
    return float(total)


def _gaussian_tail(threshold: float, t: int, p: float) -> float:
    """``Q((threshold - t p) / sqrt(t p (1 - p)))``, the step function when the variance is 0."""
    var = t * p * (1.0 - p)
    if var == 0:
        return 1.0 if threshold < t * p else 0.0
    return float(stats.norm.sf((threshold - t * p) / math.sqrt(var)))


def _warn_small_window(params: IdentificationParams, probs: Sequence[float]) -> None:
    worst = min(params.window * p * (1.0 - p) for p in probs)
    if worst < 9:
        warnings.warn(
            f"window {params.window} gives T p (1 - p) = {worst:.3g} < 9; "
            "normal approximation is rough",
            NormalApproximationWarning,
            stacklevel=3,
        )


def byzantine_tail(params: IdentificationParams, thresholds: Sequence[float], level: int, l: int) -> float:
    """``a(k, l)``: normal-approximation chance a Byzantine's distance exceeds its threshold."""
    return _gaussian_tail(thresholds[level - 1], params.window, p_diff_byzantine(params, level, l))


def honest_tail(params: IdentificationParams, thresholds: Sequence[float], level: int, l: int) -> float:
    """``b(k, l)``: normal-approximation chance an honest distance exceeds its threshold."""
    return _gaussian_tail(thresholds[level - 1], params.window, p_diff_honest(params, level, l))


def p_iso_normal(
    params: IdentificationParams, thresholds: Sequence[float], level: int
) -> float:
    """Direct product form of the normal approximation."""
    _check_thresholds(params, thresholds, level)
    total = 0.0
    for prior, l in zip(params.priors, (0, 1)):
        term = byzantine_tail(params, thresholds, level, l)
        for m in range(1, level):
            # Q((T p - eta) / sigma) = 1 - b(m, l)
            term *= 1.0 - honest_tail(params, thresholds, m, l)
        total += prior * term
    return total


def p_iso_recursive(
    params: IdentificationParams, thresholds: Sequence[float], level: int
) -> float:
    """Normal-approximation isolation probability built up level by level.

    ``P(k+1, l) = (1 - b(k, l)) a(k+1, l) / a(k, l) P(k, l)`` from ``P(1, l) = a(1, l)``.
    """
    _check_thresholds(params, thresholds, level)
    probs = [p_diff_byzantine(params, k, l) for k in range(1, level + 1) for l in (0, 1)]
    probs += [p_diff_honest(params, k, l) for k in range(1, level) for l in (0, 1)]
    _warn_small_window(params, probs)
    total = 0.0
    for prior, l in zip(params.priors, (0, 1)):
        p = byzantine_tail(params, thresholds, 1, l)
        for k in range(1, level):
            a_k = byzantine_tail(params, thresholds, k, l)
            if a_k == 0:
                raise ApproximationDomainError(
                    f"a({k}, {l}) underflows to 0 at window {params.window}"
                )
            a_next = byzantine_tail(params, thresholds, k + 1, l)
            p = (1.0 - honest_tail(params, thresholds, k, l)) * (a_next / a_k) * p
        total += prior * p
    return total


def asymptotic_lower_bound(deltas: Sequence[float], level: int) -> float:
    """Large-window lower bound on isolating a Byzantine at ``level``.

    For a Byzantine at level ``k + 1`` this is ``prod_{j=2..k} (1 - delta_j)``;
    levels 1 and 2 give 1.
    """
    if level < 1:
        raise ValidationError("level must be >= 1")
    return math.prod(1.0 - d for d in deltas[1 : level - 1])


@dataclass(frozen=True)
class IsolationReport:
    window: int
    trials: int
    thresholds: tuple[float, ...]
    byzantine_counts: tuple[int, ...]
    p_iso_exact: tuple[float, ...]
    p_iso_normal: tuple[float, ...]
    byzantine_rate: tuple[float, ...]
    byzantine_stderr: tuple[float, ...]
    honest_exact: tuple[float, ...]
    honest_rate: tuple[float, ...]
    honest_stderr: tuple[float, ...]
    descendant_rate: tuple[float, ...]
    p_iso_anchor_model: tuple[float, ...]

    def ci_halfwidth(self, level: int) -> float:
        return 3.0 * self.byzantine_stderr[level - 1]


def _stderr(rate: float, n: int) -> float:
    if n == 0 or math.isnan(rate):
        return math.nan
    return math.sqrt(rate * (1.0 - rate) / n)


def _chunk_sizes(trials: int, chunk: int) -> list[int]:
    full, rest = divmod(trials, chunk)
    return [chunk] * full + ([rest] if rest else [])


def _identification_chunk(
    topology: TreeTopology,
    cover: list[np.ndarray],
    byz_masks: list[np.ndarray],
    params: IdentificationParams,
    eta: Sequence[int],
    size: int,
    seed: np.random.SeedSequence,
) -> np.ndarray:
    """Flag counts per level for Byzantines, clean honest nodes and Byzantine descendants."""
    rng = np.random.default_rng(seed)
    t = params.window
    depth = topology.depth
    flagged = np.zeros((3, depth), dtype=np.int64)
    if t == 0:
        return flagged
    p1 = 1.0 - params.prior0
    if params.hypothesis_mode == "window":
        h = (rng.random((size, 1)) < p1)
        h = np.broadcast_to(h, (size, t))
    else:
        h = rng.random((size, t)) < p1
    anchor_p = np.where(h, params.anchor.p_detect, params.anchor.p_false_alarm)
    shared_anchor = rng.random((size, t)) < anchor_p if params.anchor_mode == "shared" else None
    p10, p01 = params.flip
    tested = None
    for k in range(1, depth + 1):
        n = topology.node_counts[k - 1]
        op = params.node_points[k - 1]
        p_one = np.where(h, op.p_detect, op.p_false_alarm)[:, :, None]
        bits = rng.random((size, t, n)) < p_one
        covered = cover[k - 1] > 0
        if covered.any():
            u = rng.random((size, t, n))
            flip = np.where(bits, u < p01, u < p10) & covered[None, None, :]
            bits = bits ^ flip
        if shared_anchor is None:
            anchor = rng.random((size, t, n)) < anchor_p[:, :, None]
        else:
            anchor = shared_anchor[:, :, None]
        dist = np.count_nonzero(bits != anchor, axis=1)
        if tested is None:
            tested = np.ones((size, n), dtype=bool)
        else:
            tested = tested[:, np.arange(n) // topology.degrees[k - 1]]
        hit = tested & (dist > eta[k - 1])
        byz = byz_masks[k - 1]
        flagged[0, k - 1] = np.count_nonzero(hit[:, byz])
        flagged[1, k - 1] = np.count_nonzero(hit[:, ~covered])
        flagged[2, k - 1] = np.count_nonzero(hit[:, covered & ~byz])
        tested = tested & ~hit
    return flagged


def simulate_identification(
    topology: TreeTopology,
    placement: AttackPlacement,
    params: IdentificationParams,
    trials: int,
    seed: int,
    workers: int = 1,
    chunk: int | None = None,
    max_trials: int = 10_000_000,
) -> IsolationReport:
    """Monte Carlo run of the level-by-level identification procedure.

    Chunks get their own seeds spawned from ``seed``, so results do not
    depend on ``workers``.
    """
    if placement.topology != topology:
        raise ValidationError("placement was built for a different topology")
    if params.depth != topology.depth:
        raise ValidationError("identification parameters do not match the tree depth")
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if trials > max_trials:
        raise ValidationError(f"trials {trials} exceed the budget {max_trials}")
    thresholds = compute_thresholds(params)
    eta = [math.floor(x) for x in thresholds]
    cover = placement.covering_levels()
    byz_masks = []
    for k in range(1, topology.depth + 1):
        mask = np.zeros(topology.node_counts[k - 1], dtype=bool)
        mask[list(placement.byzantines[k - 1])] = True
        byz_masks.append(mask)
    if chunk is None:
        per_trial = max(params.window, 1) * max(topology.node_counts)
        chunk = max(1, min(trials, 2_000_000 // per_trial))
    sizes = _chunk_sizes(trials, chunk)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [
        (topology, cover, byz_masks, params, eta, size, s) for size, s in zip(sizes, seeds)
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _identification_chunk(*job), jobs))
    else:
        parts = [_identification_chunk(*job) for job in jobs]
    flagged = sum(parts)

    counts = placement.counts()
    byz_rate, byz_se, hon_rate, hon_se, desc_rate = [], [], [], [], []
    for k in range(topology.depth):
        clean = int(np.count_nonzero(cover[k] == 0))
        nb = counts[k] * trials
        nh = clean * trials
        nd = (topology.node_counts[k] - clean - counts[k]) * trials
        rb = flagged[0, k] / nb if nb else math.nan
        rh = flagged[1, k] / nh if nh else math.nan
        byz_rate.append(float(rb))
        byz_se.append(_stderr(rb, nb))
        hon_rate.append(float(rh))
        hon_se.append(_stderr(rh, nh))
        desc_rate.append(float(flagged[2, k] / nd) if nd else math.nan)
    levels = range(1, topology.depth + 1)
    exact_fn = p_iso_exact if params.anchor_mode == "independent" else p_iso_shared_anchor
    return IsolationReport(
        window=params.window,
        trials=trials,
        thresholds=thresholds,
        byzantine_counts=counts,
        p_iso_exact=tuple(p_iso_exact(params, thresholds, k) for k in levels),
        p_iso_normal=tuple(p_iso_normal(params, thresholds, k) for k in levels),
        byzantine_rate=tuple(byz_rate),
        byzantine_stderr=tuple(byz_se),
        honest_exact=tuple(honest_isolation_exact(params, thresholds, k) for k in levels),
        honest_rate=tuple(hon_rate),
        honest_stderr=tuple(hon_se),
        descendant_rate=tuple(desc_rate),
        p_iso_anchor_model=tuple(exact_fn(params, thresholds, k) for k in levels),
    )
