import math
import warnings

import numpy as np
import pytest
from scipy import stats

from byztree.attack import FlipStrategy, OperatingPoint, level_channels
from byztree.errors import DegenerateStatisticWarning
from byztree.fusion import (
    calibrate_threshold,
    replication_slope,
    run_fusion_experiment,
    run_trial,
)
from byztree.topology import AttackConfig, AttackPlacement, TreeTopology, sample_placement

OPS2 = [OperatingPoint(0.8, 0.2)] * 2


def test_perfect_sensors_saturate():
    topo = TreeTopology((2, 3))
    ops = [OperatingPoint(1.0, 0.0)] * 2
    rec = run_trial(topo, AttackPlacement.honest(topo), FlipStrategy.honest(2), ops, 1, seed=0)
    assert rec.ones == topo.node_counts
    assert rec.statistic == math.inf
    assert rec.decision == 1


def test_perfect_sensors_finite_weights():
    topo = TreeTopology((3,))
    ops = [OperatingPoint(0.9, 0.1)]
    rec = run_trial(topo, AttackPlacement.honest(topo), FlipStrategy.honest(1),
                    [OperatingPoint(1.0, 0.0)], 1, seed=0,
                    assumed_config=AttackConfig(topo, (1,)),
                    assumed_strategy=FlipStrategy(((0.5, 0.5),)))
    assert rec.ones == (3,)
    assert np.isfinite(rec.statistic) and rec.statistic > 0


def test_blinded_statistic_is_zero():
    topo = TreeTopology((4, 2))
    placement = sample_placement(topo, AttackConfig(topo, (2, 0)), 0)
    for h in (0, 1):
        rec = run_trial(topo, placement, FlipStrategy.always_flip(2), OPS2, h, seed=h)
        assert rec.statistic == 0.0


def test_trial_replay():
    topo = TreeTopology((3, 2))
    placement = sample_placement(topo, AttackConfig(topo, (1, 0)), 4)
    a = run_trial(topo, placement, FlipStrategy.always_flip(2), OPS2, 1, seed=42)
    b = run_trial(topo, placement, FlipStrategy.always_flip(2), OPS2, 1, seed=42)
    assert a == b
    assert all(0 <= s <= n for s, n in zip(a.ones, topo.node_counts))


def test_blinded_calibration_is_degenerate():
    topo = TreeTopology((4, 2))
    placement = sample_placement(topo, AttackConfig(topo, (2, 0)), 0)
    with pytest.warns(DegenerateStatisticWarning):
        th = calibrate_threshold(topo, placement, FlipStrategy.always_flip(2), OPS2, 0.1, 2_000, 1)
    assert th == 0.0


def test_median_threshold_single_level():
    topo = TreeTopology((20,))
    ops = [OperatingPoint(0.8, 0.2)]
    th = calibrate_threshold(topo, AttackPlacement.honest(topo), FlipStrategy.honest(1), ops,
                             0.5, 20_000, 3)
    s_med = int(stats.binom.median(20, 0.2))
    assert th == pytest.approx(math.log(4) * (2 * s_med - 20), abs=1e-12)


def test_full_delta_gives_minimum():
    topo = TreeTopology((5,))
    ops = [OperatingPoint(0.8, 0.2)]
    with pytest.warns(RuntimeWarning):
        th = calibrate_threshold(topo, AttackPlacement.honest(topo), FlipStrategy.honest(1), ops,
                                 1.0, 50, 3)
    assert th == pytest.approx(-5 * math.log(4), abs=1e-12)


def test_few_calibration_trials_warn():
    topo = TreeTopology((5,))
    with pytest.warns(RuntimeWarning, match="noisy"):
        calibrate_threshold(topo, AttackPlacement.honest(topo), FlipStrategy.honest(1),
                            [OperatingPoint(0.8, 0.2)], 0.01, 1_000, 3)


def test_false_alarm_within_budget_and_rates_match_channel():
    topo = TreeTopology((5, 2))
    placement = sample_placement(topo, AttackConfig(topo, (2, 0)), 1)
    rep = run_fusion_experiment(topo, placement, FlipStrategy.always_flip(2), OPS2, 0.1, 20_000, 7)
    assert rep.p_false_alarm <= 0.1 + 3 * math.sqrt(0.1 * 0.9 / 20_000)
    for lr in rep.level_rates:
        assert lr.pi10 == pytest.approx(0.44) and lr.pi11 == pytest.approx(0.56)
        assert abs(lr.delta_h0) < 4 * lr.stderr_h0
        assert abs(lr.delta_h1) < 4 * lr.stderr_h1


def test_blinded_experiment_never_detects():
    topo = TreeTopology((4, 2))
    placement = sample_placement(topo, AttackConfig(topo, (2, 0)), 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateStatisticWarning)
        rep = run_fusion_experiment(topo, placement, FlipStrategy.always_flip(2), OPS2, 0.1, 2_000, 1)
    assert rep.degenerate
    assert rep.p_miss == 1.0 and rep.p_false_alarm == 0.0


def test_statistic_orders_like_likelihood_ratio():
    topo = TreeTopology((3, 2))
    cfg = AttackConfig(topo, (1, 0))
    placement = sample_placement(topo, cfg, 2)
    strat = FlipStrategy.always_flip(2)
    chans = level_channels(cfg, strat, OPS2)
    recs = [run_trial(topo, placement, strat, OPS2, s % 2, seed=s) for s in range(60)]
    llr = []
    for r in recs:
        v = 0.0
        for s, n, ch in zip(r.ones, topo.node_counts, chans):
            v += stats.binom.logpmf(s, n, ch.pi11) - stats.binom.logpmf(s, n, ch.pi10)
        llr.append(v)
    got = [r.statistic for r in recs]
    assert np.allclose(got, llr, atol=1e-10)


def test_experiment_deterministic_across_workers():
    topo = TreeTopology((3, 2))
    placement = sample_placement(topo, AttackConfig(topo, (1, 0)), 2)
    args = (topo, placement, FlipStrategy.always_flip(2), OPS2, 0.2, 5_000, 13)
    assert run_fusion_experiment(*args, chunk=900) == run_fusion_experiment(*args, chunk=900, workers=3)


def test_mismatched_assumption_changes_weights():
    topo = TreeTopology((4,))
    placement = sample_placement(topo, AttackConfig(topo, (1,)), 0)
    strat = FlipStrategy.always_flip(1)
    ops = [OperatingPoint(0.8, 0.2)]
    right = run_trial(topo, placement, strat, ops, 1, seed=5)
    wrong = run_trial(topo, placement, strat, ops, 1, seed=5,
                      assumed_config=AttackConfig.none(topo))
    assert right.ones == wrong.ones
    assert right.statistic != wrong.statistic


def test_replication_points():
    topo = TreeTopology((2, 2))
    cfg = AttackConfig(topo, (0, 1))
    fit = replication_slope(topo, cfg, OPS2, copies=(1, 2), delta=0.5, trials=20_000, seed=1)
    assert [p.copies for p in fit.points] == [1, 2]
    assert fit.points[1].divergence == pytest.approx(2 * fit.base_divergence)
    assert fit.points[1].neg_log_p_miss > fit.points[0].neg_log_p_miss
