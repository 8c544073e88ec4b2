"""Command-line entry point: one subcommand per analysis, CSV plus PNG output."""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import plotting
from .config import ConfigError, ExperimentConfig, load_config
from .divergence import kld_surface, kld_vs_coverage, optimal_attack_strategy
from .errors import ApproximationDomainError, EnumerationLimitError, ValidationError
from .fusion import replication_slope, run_fusion_experiment
from .identification import (
    asymptotic_lower_bound,
    p_iso_recursive,
    simulate_identification,
)
from .stackelberg import (
    ENUMERATION_LIMIT,
    bilevel_bruteforce,
    payoff_table,
    solve_bilevel,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_APPROXIMATION = 4


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _strategy_for(cfg: ExperimentConfig):
    if cfg.strategy is not None:
        return cfg.strategy
    return optimal_attack_strategy(cfg.attack.coverages())


def cmd_attack_surface(cfg: ExperimentConfig, plot: bool) -> list[Path]:
    op = cfg.operating_points[cfg.surface_level - 1]
    grid, values = kld_surface(cfg.surface_coverage, op, cfg.grid)
    rows = [
        (grid[i], grid[j], values[i, j])
        for i in range(grid.size)
        for j in range(grid.size)
    ]
    out = [write_csv(cfg.out / "attack_surface.csv", ("p10", "p01", "kld"), rows)]
    if plot:
        out.append(plotting.plot_attack_surface(
            grid, values, cfg.surface_coverage, cfg.out / "attack_surface.png"))
    return out


def _decreasing_convex(values: Sequence[float]) -> tuple[bool, bool]:
    v = np.asarray(values)
    decreasing = bool(np.all(np.diff(v) < 0))
    convex = bool(np.all(np.diff(v, 2) >= -1e-9))
    return decreasing, convex


def cmd_coverage_curve(cfg: ExperimentConfig, plot: bool) -> list[Path]:
    op = cfg.operating_points[cfg.surface_level - 1]
    n = int(math.ceil(0.5 / cfg.coverage_step - 1e-9))
    ts = [round(i * cfg.coverage_step, 12) for i in range(n)]
    curve = kld_vs_coverage(op, ts)
    decreasing, convex = _decreasing_convex([d for _, d in curve])
    rows = list(curve) + [("summary", f"decreasing={int(decreasing)} convex={int(convex)}")]
    out = [write_csv(cfg.out / "coverage_curve.csv", ("t", "min_kld"), rows)]
    if plot:
        out.append(plotting.plot_coverage_curve(
            [t for t, _ in curve], [d for _, d in curve], cfg.out / "coverage_curve.png"))
    return out


class InfeasibleGame(Exception):
    pass


def cmd_stackelberg(cfg: ExperimentConfig, plot: bool) -> list[Path]:
    if cfg.game is None:
        raise ConfigError("game: section required for the stackelberg subcommand")
    game = cfg.game
    sol = solve_bilevel(game.costs, cfg.topology, cfg.operating_points, game.budgets, game.tie_break)
    if sol is None:
        raise InfeasibleGame(
            f"no {cfg.topology.depth}-subset of costs {game.costs} fits the network budget "
            f"{game.budgets.network}"
        )
    try:
        oracle = bilevel_bruteforce(game.costs, cfg.topology, cfg.operating_points, game.budgets)
    except EnumerationLimitError:
        oracle = None
    out = []
    levels = [
        (k, c, b, n, t)
        for k, (c, b, n, t) in enumerate(
            zip(sol.allocated_costs, sol.attack.byzantine_counts, cfg.topology.node_counts,
                sol.attack.coverages()),
            start=1,
        )
    ]
    out.append(write_csv(
        cfg.out / "stackelberg_levels.csv",
        ("level", "allocated_cost", "byzantines", "nodes", "coverage"),
        [(k, float(c), b, n, float(t)) for k, c, b, n, t in levels],
    ))
    summary = [
        ("defender_payoff", sol.defender_payoff),
        ("attacker_profit", sol.attacker_profit),
        ("blinded", sol.blinded),
        ("oracle_payoff", oracle.defender_payoff if oracle else "skipped"),
        ("oracle_agrees", int(oracle.defender_payoff == sol.defender_payoff) if oracle else "skipped"),
    ]
    out.append(write_csv(cfg.out / "stackelberg_summary.csv", ("field", "value"), summary))
    try:
        table = payoff_table(sol.allocated_costs, cfg.topology, cfg.operating_points,
                             game.budgets.attacker, ENUMERATION_LIMIT)
    except EnumerationLimitError:
        table = None
    if table is not None:
        depth = cfg.topology.depth
        header = tuple(f"b{k}" for k in range(1, depth + 1)) + ("feasible", "min_kld")
        out.append(write_csv(cfg.out / "payoff_table.csv", header,
                             [(*b, f, d) for b, f, d in table]))
        if plot:
            out.append(plotting.plot_payoff_table(
                table, sol.attack.byzantine_counts, cfg.out / "payoff_table.png"))
    return out


def cmd_identify(cfg: ExperimentConfig, plot: bool, trials: int | None) -> list[Path]:
    ident = cfg.identification
    if ident is None:
        raise ConfigError("identification: section required for the identify subcommand")
    n_trials = trials if trials is not None else ident.trials
    rows = []
    exact, mc = [], []
    for t in ident.windows:
        params = ident.params.with_window(t)
        report = simulate_identification(
            cfg.topology, cfg.placement, params, n_trials, cfg.seed, workers=cfg.workers)
        if ident.normal_form == "recursive":
            normal = [p_iso_recursive(params, report.thresholds, k)
                      for k in range(1, cfg.topology.depth + 1)]
        else:
            normal = report.p_iso_normal
        for k in range(1, cfg.topology.depth + 1):
            rows.append((
                t, k, report.thresholds[k - 1], report.p_iso_exact[k - 1], normal[k - 1],
                report.byzantine_rate[k - 1], report.ci_halfwidth(k),
                report.honest_rate[k - 1], report.honest_exact[k - 1],
                asymptotic_lower_bound(params.deltas, k),
            ))
        exact.append(report.p_iso_exact)
        mc.append(report.byzantine_rate)
    header = ("T", "level", "threshold", "p_iso_exact", "p_iso_normal", "p_iso_mc",
              "ci_halfwidth", "honest_mc", "honest_exact", "bound")
    out = [write_csv(cfg.out / "identification.csv", header, rows)]
    if plot and ident.windows:
        out.append(plotting.plot_isolation(
            ident.windows, np.array(exact), np.array(mc), cfg.out / "identification.png"))
    return out


def cmd_fuse(cfg: ExperimentConfig, plot: bool, trials: int | None) -> list[Path]:
    fus = cfg.fusion
    if fus is None:
        raise ConfigError("fusion: section required for the fuse subcommand")
    n_trials = trials if trials is not None else fus.trials
    strategy = _strategy_for(cfg)
    report = run_fusion_experiment(
        cfg.topology, cfg.placement, strategy, cfg.operating_points, fus.delta, n_trials,
        cfg.seed, workers=cfg.workers,
    )
    out = [write_csv(
        cfg.out / "fusion.csv",
        ("delta", "trials", "threshold", "p_f_hat", "p_f_ci", "p_m_hat", "p_m_ci", "degenerate"),
        [(fus.delta, report.trials, report.log_threshold, report.p_false_alarm,
          report.p_false_alarm_ci, report.p_miss, report.p_miss_ci, report.degenerate)],
    )]
    out.append(write_csv(
        cfg.out / "fusion_levels.csv",
        ("level", "rate_h0", "pi10", "delta_h0", "stderr_h0",
         "rate_h1", "pi11", "delta_h1", "stderr_h1"),
        [(r.level, r.rate_h0, r.pi10, r.delta_h0, r.stderr_h0,
          r.rate_h1, r.pi11, r.delta_h1, r.stderr_h1) for r in report.level_rates],
    ))
    if fus.replication:
        fit = replication_slope(
            cfg.topology, cfg.attack, cfg.operating_points, fus.replication, fus.delta,
            fus.replication_trials, cfg.seed, workers=cfg.workers,
        )
        rows = [(p.copies, p.divergence, p.p_miss, p.neg_log_p_miss) for p in fit.points]
        rows.append(("slope", fit.slope, fit.base_divergence, fit.relative_error))
        out.append(write_csv(
            cfg.out / "replication.csv", ("copies", "kld", "p_miss", "neg_log_p_miss"), rows))
        if plot:
            out.append(plotting.plot_replication(
                [p.copies for p in fit.points], [p.neg_log_p_miss for p in fit.points],
                fit.slope, fit.intercept, fit.base_divergence, cfg.out / "replication.png"))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byztree",
        description="Byzantine attacks and defenses in tree-structured detection networks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--trials", type=int, help="Monte Carlo trials (overrides the config)")
    common.add_argument("--grid", type=int, help="flip-grid resolution (overrides the config)")
    common.add_argument("--workers", type=int, help="parallel workers; results do not depend on it")
    common.add_argument("--no-plot", action="store_true", help="skip PNG figures")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("attack-surface", "divergence over the flip-probability grid"),
        ("coverage-curve", "minimum divergence against coverage"),
        ("stackelberg", "solve the cost-allocation game and its payoff table"),
        ("identify", "isolation probabilities over window lengths"),
        ("fuse", "Monte Carlo fusion with a calibrated threshold"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = Path(args.out)
    if args.grid is not None:
        if args.grid < 2:
            raise ConfigError("--grid: must be >= 2")
        changes["grid"] = args.grid
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers: must be >= 1")
        changes["workers"] = args.workers
    if args.trials is not None and args.trials < 1:
        raise ConfigError("--trials: must be >= 1")
    return replace(cfg, **changes) if changes else cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    plot = not args.no_plot
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        if args.command == "attack-surface":
            written = cmd_attack_surface(cfg, plot)
        elif args.command == "coverage-curve":
            written = cmd_coverage_curve(cfg, plot)
        elif args.command == "stackelberg":
            written = cmd_stackelberg(cfg, plot)
        elif args.command == "identify":
            written = cmd_identify(cfg, plot, args.trials)
        else:
            written = cmd_fuse(cfg, plot, args.trials)
    except InfeasibleGame as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ApproximationDomainError as exc:
        print(f"approximation error: {exc}", file=sys.stderr)
        return EXIT_APPROXIMATION
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
