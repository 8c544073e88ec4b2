import math
import warnings
from statistics import NormalDist

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byztree.attack import OperatingPoint
from byztree.errors import ApproximationDomainError, NormalApproximationWarning, ValidationError
from byztree.identification import (
    IdentificationParams,
    asymptotic_lower_bound,
    byzantine_tail,
    compute_threshold,
    compute_thresholds,
    honest_tail,
    p_diff_byzantine,
    p_diff_honest,
    p_iso_exact,
    p_iso_normal,
    p_iso_recursive,
    p_iso_shared_anchor,
    simulate_identification,
)
from byztree.topology import AttackPlacement, TreeTopology

ANCHOR = OperatingPoint(0.9, 0.1)
LEVEL_POINTS = (
    OperatingPoint(0.8, 0.1),
    OperatingPoint(0.75, 0.1),
    OperatingPoint(0.6, 0.1),
    OperatingPoint(0.65, 0.1),
    OperatingPoint(0.6, 0.1),
)


def five_level(window, **kw):
    return IdentificationParams(ANCHOR, LEVEL_POINTS, (0.01,) * 5, window, **kw)


def one_level(window, **kw):
    return IdentificationParams(ANCHOR, LEVEL_POINTS[:1], (0.01,), window, **kw)


def _binom_tail(t, p, eta):
    return sum(math.comb(t, j) * p**j * (1 - p) ** (t - j) for j in range(math.floor(eta) + 1, t + 1))


def _binom_head(t, p, eta):
    return sum(math.comb(t, j) * p**j * (1 - p) ** (t - j) for j in range(0, math.floor(eta) + 1))


@pytest.mark.parametrize("hyp, honest, byz", [(0, 0.18, 0.82), (1, 0.26, 0.74)])
def test_disagreement_probabilities(hyp, honest, byz):
    p = one_level(25)
    assert p_diff_honest(p, 1, hyp) == pytest.approx(honest, abs=1e-15)
    assert p_diff_byzantine(p, 1, hyp) == pytest.approx(byz, abs=1e-15)


def test_perfect_nodes():
    perfect = OperatingPoint(1.0, 0.0)
    p = IdentificationParams(perfect, (perfect,), (0.01,), 10)
    assert p_diff_honest(p, 1, 0) == p_diff_honest(p, 1, 1) == 0
    assert p_diff_byzantine(p, 1, 0) == p_diff_byzantine(p, 1, 1) == 1


def test_fair_coins_disagree_half_the_time():
    coin = OperatingPoint(0.5, 0.5)
    p = IdentificationParams(coin, (OperatingPoint(0.9, 0.5),), (0.01,), 10)
    assert p_diff_honest(p, 1, 0) == 0.5


def test_separation_violation_is_fatal():
    coin = OperatingPoint(0.5, 0.5)
    p = IdentificationParams(OperatingPoint(0.6, 0.4), (coin,), (0.01,), 10)
    with pytest.raises(ValidationError, match="level 1"):
        compute_thresholds(p)


@pytest.mark.parametrize(
    "kwargs",
    [dict(deltas=(0.5,)), dict(deltas=(0.0,)), dict(window=-1), dict(prior0=1.5),
     dict(hypothesis_mode="slot"), dict(anchor_mode="many"), dict(deltas=(0.01, 0.01))],
)
def test_params_validation(kwargs):
    base = dict(anchor=ANCHOR, node_points=LEVEL_POINTS[:1], deltas=(0.01,), window=5)
    base.update(kwargs)
    with pytest.raises(ValidationError):
        IdentificationParams(**base)


def test_threshold_takes_worst_hypothesis():
    z = NormalDist().inv_cdf(0.99)
    cand0 = z * math.sqrt(25 * 0.18 * 0.82) + 25 * 0.18
    cand1 = z * math.sqrt(25 * 0.26 * 0.74) + 25 * 0.26
    assert cand0 == pytest.approx(8.969, abs=1e-3)
    assert cand1 == pytest.approx(11.602, abs=1e-3)
    assert compute_threshold(one_level(25), 1) == pytest.approx(cand1, abs=1e-9)
    assert compute_threshold(one_level(25), 1) == pytest.approx(11.602079204929238, abs=1e-9)


def test_threshold_at_half_delta_is_mean():
    p = IdentificationParams(ANCHOR, LEVEL_POINTS[:1], (0.5 - 1e-12,), 40)
    assert compute_threshold(p, 1) == pytest.approx(40 * 0.26, abs=1e-9)


def test_threshold_scaling_law():
    z = NormalDist().inv_cdf(0.99)
    for t in (10, 25, 100):
        dev = compute_threshold(one_level(t), 1) - t * 0.26
        dev4 = compute_threshold(one_level(4 * t), 1) - 4 * t * 0.26
        assert dev4 == pytest.approx(2 * dev, rel=1e-12)
        assert dev == pytest.approx(z * math.sqrt(t * 0.26 * 0.74), rel=1e-9)


def test_single_level_exact():
    p = one_level(25)
    th = compute_thresholds(p)
    oracle = 0.5 * _binom_tail(25, 0.82, th[0]) + 0.5 * _binom_tail(25, 0.74, th[0])
    frozen = 0.9992938401395037
    assert oracle == pytest.approx(frozen, abs=1e-14)
    assert p_iso_exact(p, th, 1) == pytest.approx(frozen, abs=1e-12)


def test_exact_five_levels_against_direct_sums():
    p = five_level(25)
    th = compute_thresholds(p)
    for k in range(1, 6):
        oracle = 0.0
        for hyp in (0, 1):
            term = _binom_tail(25, p_diff_byzantine(p, k, hyp), th[k - 1])
            for m in range(1, k):
                term *= _binom_head(25, p_diff_honest(p, m, hyp), th[m - 1])
            oracle += 0.5 * term
        assert p_iso_exact(p, th, k) == pytest.approx(oracle, abs=1e-12)


FROZEN_T25 = (0.9992938401395037, 0.983658320680621, 0.5888086866614284,
              0.7388327481864991, 0.5872560536196227)


def test_exact_regression_values_at_25():
    p = five_level(25)
    th = compute_thresholds(p)
    got = tuple(p_iso_exact(p, th, k) for k in range(1, 6))
    assert got == pytest.approx(FROZEN_T25, abs=1e-12)


def test_tiny_ancestor_delta_opens_every_gate():
    p = IdentificationParams(ANCHOR, LEVEL_POINTS[:3], (1e-300, 1e-300, 0.01), 25)
    th = compute_thresholds(p)
    assert th[0] >= 25 and th[1] >= 25
    tail = sum(0.5 * _binom_tail(25, p_diff_byzantine(p, 3, h), th[2]) for h in (0, 1))
    assert p_iso_exact(p, th, 3) == pytest.approx(tail, abs=1e-14)


def test_empty_window():
    p = five_level(0)
    th = compute_thresholds(p)
    assert all(p_iso_exact(p, th, k) == 0 for k in range(1, 6))
    assert all(p_iso_normal(p, th, k) == 0 for k in range(1, 6))


def test_recursion_underflow_is_reported():
    p = five_level(0)
    th = compute_thresholds(p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NormalApproximationWarning)
        with pytest.raises(ApproximationDomainError):
            p_iso_recursive(p, th, 2)


def test_short_window_warns():
    p = five_level(10)
    with pytest.warns(NormalApproximationWarning):
        p_iso_recursive(p, compute_thresholds(p), 3)


@pytest.mark.parametrize("window", [10, 25, 60, 100, 400])
def test_recursion_equals_product_form(window):
    p = five_level(window)
    th = compute_thresholds(p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NormalApproximationWarning)
        for k in range(1, 6):
            assert p_iso_recursive(p, th, k) == pytest.approx(p_iso_normal(p, th, k), abs=1e-12)


@pytest.mark.parametrize("window", [100, 150, 250, 500, 1000])
def test_exact_and_normal_agree_for_long_windows(window):
    p = five_level(window)
    th = compute_thresholds(p)
    for k in range(1, 6):
        assert abs(p_iso_exact(p, th, k) - p_iso_recursive(p, th, k)) < 0.02


@pytest.mark.parametrize("window", [5, 25, 100])
def test_ancestor_gates_never_raise_isolation(window):
    p = five_level(window)
    th = compute_thresholds(p)
    for k in range(1, 6):
        ungated = sum(0.5 * byzantine_tail(p, th, k, h) for h in (0, 1))
        assert p_iso_normal(p, th, k) <= ungated + 1e-15


@settings(max_examples=60, deadline=None)
@given(st.floats(0.55, 0.95), st.floats(0.01, 0.2), st.integers(1, 300), st.floats(0.001, 0.2))
def test_homogeneous_levels_non_increasing(pd, pfa, window, delta):
    p = IdentificationParams(ANCHOR, (OperatingPoint(pd, pfa),) * 4, (delta,) * 4, window)
    try:
        th = compute_thresholds(p)
    except ValidationError:
        return
    vals = [p_iso_normal(p, th, k) for k in range(1, 5)]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("level", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("hyp", [0, 1])
def test_byzantine_tail_rises_to_one(level, hyp):
    values = []
    for t in range(200, 4001, 200):
        p = five_level(t)
        values.append(byzantine_tail(p, compute_thresholds(p), level, hyp))
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert values[-1] > 1 - 1e-9


@pytest.mark.parametrize("level", [1, 3, 5])
def test_honest_tail_pinned_at_delta(level):
    p = five_level(50)
    th = compute_thresholds(p)
    assert max(honest_tail(p, th, level, h) for h in (0, 1)) == pytest.approx(0.01, abs=1e-12)


@pytest.mark.parametrize(
    "deltas, level, expected",
    [((0.01,) * 5, 5, 0.970299), ((0.01,) * 5, 1, 1.0), ((0.01,) * 5, 2, 1.0),
     ((0.2, 0.0, 0.0), 3, 1.0), ((0.1, 0.2, 0.3, 0.4), 4, 0.8 * 0.7)],
)
def test_asymptotic_bound(deltas, level, expected):
    assert asymptotic_lower_bound(deltas, level) == pytest.approx(expected, abs=1e-12)


def test_general_flip_reduces_to_deterministic():
    p = one_level(25, flip=(1.0, 1.0))
    q = one_level(25, flip=(0.0, 0.0))
    assert p_diff_byzantine(q, 1, 1) == pytest.approx(p_diff_honest(q, 1, 1))
    assert p_diff_byzantine(p, 1, 0) == pytest.approx(0.1 * 0.1 + 0.9 * 0.9)


FIVE_TREE = TreeTopology((2, 2, 2, 2, 2))
FIVE_PLACEMENT = AttackPlacement(
    FIVE_TREE, (frozenset({0}), frozenset({2}), frozenset({6}), frozenset({14}), frozenset({30}))
)


def _z(rate, expected, n):
    se = math.sqrt(expected * (1 - expected) / n)
    return abs(rate - expected) / se if se else (0.0 if rate == expected else math.inf)


def test_single_level_byzantine_monte_carlo():
    topo = TreeTopology((4,))
    placement = AttackPlacement(topo, (frozenset({1}),))
    p = one_level(25)
    rep = simulate_identification(topo, placement, p, 20_000, seed=3)
    assert _z(rep.byzantine_rate[0], rep.p_iso_exact[0], 20_000) < 4


@pytest.mark.parametrize("mode", ["independent", "shared"])
def test_monte_carlo_matches_anchor_model(mode):
    p = five_level(10, anchor_mode=mode)
    rep = simulate_identification(FIVE_TREE, FIVE_PLACEMENT, p, 20_000, seed=5)
    for k in range(5):
        assert _z(rep.byzantine_rate[k], rep.p_iso_anchor_model[k], 20_000) < 4


def test_independent_anchor_model_is_product_form():
    p = five_level(10, anchor_mode="independent")
    rep = simulate_identification(FIVE_TREE, FIVE_PLACEMENT, p, 10, seed=0)
    assert rep.p_iso_anchor_model == rep.p_iso_exact


def test_shared_anchor_exact_single_level_matches_product():
    p = one_level(25)
    th = compute_thresholds(p)
    assert p_iso_shared_anchor(p, th, 1) == pytest.approx(p_iso_exact(p, th, 1), abs=1e-13)


def test_all_honest_false_isolation():
    p = five_level(25)
    rep = simulate_identification(FIVE_TREE, AttackPlacement.honest(FIVE_TREE), p, 5_000, seed=2)
    for k in range(5):
        assert rep.honest_rate[k] <= 0.01 + 3 * rep.honest_stderr[k]
        assert math.isnan(rep.byzantine_rate[k])


def test_empty_window_simulation():
    rep = simulate_identification(FIVE_TREE, FIVE_PLACEMENT, five_level(0), 500, seed=1)
    assert rep.byzantine_rate == (0.0,) * 5
    assert rep.honest_rate == (0.0,) * 5


def test_simulation_is_deterministic_across_workers():
    p = five_level(10)
    a = simulate_identification(FIVE_TREE, FIVE_PLACEMENT, p, 3_000, seed=9, chunk=700)
    b = simulate_identification(FIVE_TREE, FIVE_PLACEMENT, p, 3_000, seed=9, chunk=700, workers=4)
    assert a == b


def test_step_hypothesis_mode_runs():
    p = five_level(10, hypothesis_mode="step")
    rep = simulate_identification(FIVE_TREE, FIVE_PLACEMENT, p, 2_000, seed=4)
    assert all(0 <= r <= 1 for r in rep.byzantine_rate)


def test_simulation_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        simulate_identification(FIVE_TREE, FIVE_PLACEMENT, five_level(10), 0, seed=0)
    with pytest.raises(ValidationError):
        simulate_identification(FIVE_TREE, FIVE_PLACEMENT, five_level(10), 100, seed=0, max_trials=10)
    with pytest.raises(ValidationError):
        simulate_identification(TreeTopology((2,)), FIVE_PLACEMENT, one_level(10), 10, seed=0)


def test_unidentified_byzantine_corrupts_descendants():
    topo = TreeTopology((2, 2))
    placement = AttackPlacement(topo, (frozenset({0}), frozenset()))
    p = IdentificationParams(ANCHOR, LEVEL_POINTS[:2], (0.01, 0.01), 3)
    rep = simulate_identification(topo, placement, p, 20_000, seed=8)
    assert rep.descendant_rate[1] > 5 * rep.honest_rate[1]
