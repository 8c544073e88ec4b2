"""JSON experiment configuration with field-precise validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .attack import FlipStrategy, OperatingPoint
from .errors import ValidationError
from .identification import IdentificationParams
from .stackelberg import TIE_BREAKS, Budgets
from .topology import AttackConfig, AttackPlacement, TreeTopology, sample_placement


class ConfigError(ValidationError):
    """A configuration file is malformed or violates a model invariant."""


def _fail(path: str, msg: str) -> ConfigError:
    return ConfigError(f"{path}: {msg}")


def _get(obj: dict, key: str, path: str, default: Any = ...) -> Any:
    if key in obj:
        return obj[key]
    if default is ...:
        raise _fail(f"{path}.{key}" if path else key, "missing required field")
    return default


def _number(x: Any, path: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise _fail(path, f"expected a number, got {x!r}")
    return x


def _integer(x: Any, path: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise _fail(path, f"expected an integer, got {x!r}")
    return x


def _list(x: Any, path: str) -> list:
    if not isinstance(x, list):
        raise _fail(path, f"expected a list, got {x!r}")
    return x


def _section(obj: dict, key: str) -> dict:
    sec = obj.get(key, {})
    if not isinstance(sec, dict):
        raise _fail(key, "expected an object")
    return sec


def _operating_point(x: Any, path: str) -> OperatingPoint:
    pair = _list(x, path)
    if len(pair) != 2:
        raise _fail(path, "expected [p_detect, p_false_alarm]")
    try:
        return OperatingPoint(_number(pair[0], f"{path}[0]"), _number(pair[1], f"{path}[1]"))
    except ConfigError:
        raise
    except ValidationError as exc:
        raise _fail(path, str(exc)) from None


def _is_pair(x: Any) -> bool:
    return isinstance(x, list) and len(x) == 2 and not any(isinstance(v, list) for v in x)


def _per_level(x: Any, depth: int, path: str, parse, single) -> tuple:
    """A single value broadcast to every level, or one value per level."""
    if single(x):
        return tuple(parse(x, path) for _ in range(depth))
    items = _list(x, path)
    if len(items) != depth:
        raise _fail(path, f"expected {depth} entries, got {len(items)}")
    return tuple(parse(v, f"{path}[{i}]") for i, v in enumerate(items))


@dataclass(frozen=True)
class GameSettings:
    costs: tuple
    budgets: Budgets
    tie_break: str = "lookahead"


@dataclass(frozen=True)
class IdentificationSettings:
    params: IdentificationParams
    windows: tuple[int, ...]
    trials: int
    normal_form: str = "product"


@dataclass(frozen=True)
class FusionSettings:
    delta: float
    trials: int
    replication: tuple[int, ...] = ()
    replication_trials: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    topology: TreeTopology
    operating_points: tuple[OperatingPoint, ...]
    attack: AttackConfig
    placement: AttackPlacement
    strategy: FlipStrategy | None  # None means the optimal strategy for the attack
    seed: int
    workers: int
    out: Path
    grid: int
    surface_coverage: float
    surface_level: int
    coverage_step: float
    game: GameSettings | None = None
    identification: IdentificationSettings | None = None
    fusion: FusionSettings | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)


def _placement(raw: dict, topology: TreeTopology) -> tuple[AttackConfig, AttackPlacement]:
    sec = _section(raw, "attack")
    if "placement" in sec:
        marks = _list(sec["placement"], "attack.placement")
        if len(marks) != topology.depth:
            raise _fail("attack.placement", f"expected {topology.depth} levels")
        levels = []
        for k, m in enumerate(marks):
            p = f"attack.placement[{k}]"
            levels.append(frozenset(_integer(i, f"{p}[{j}]") for j, i in enumerate(_list(m, p))))
        try:
            placement = AttackPlacement(topology, tuple(levels))
        except ValidationError as exc:
            raise _fail("attack.placement", str(exc)) from None
        return placement.config(), placement
    counts = _list(_get(sec, "byzantines", "attack", [0] * topology.depth), "attack.byzantines")
    counts = [_integer(b, f"attack.byzantines[{i}]") for i, b in enumerate(counts)]
    try:
        config = AttackConfig(topology, tuple(counts))
    except ValidationError as exc:
        raise _fail("attack.byzantines", str(exc)) from None
    seed = _integer(_get(sec, "placement_seed", "attack", 0), "attack.placement_seed")
    try:
        placement = sample_placement(topology, config, seed)
    except ValidationError as exc:
        raise _fail("attack.byzantines", str(exc)) from None
    return config, placement


def _strategy(raw: dict, depth: int) -> FlipStrategy | None:
    x = raw.get("strategy", "optimal")
    if x == "optimal":
        return None
    if x == "always_flip":
        return FlipStrategy.always_flip(depth)
    pairs = _per_level(x, depth, "strategy", lambda v, p: tuple(
        _number(q, f"{p}[{i}]") for i, q in enumerate(_list(v, p))), _is_pair)
    try:
        return FlipStrategy(pairs)
    except ValidationError as exc:
        raise _fail("strategy", str(exc)) from None


def _game(raw: dict) -> GameSettings | None:
    if "game" not in raw:
        return None
    sec = _section(raw, "game")
    costs = tuple(
        _number(c, f"game.costs[{i}]")
        for i, c in enumerate(_list(_get(sec, "costs", "game"), "game.costs"))
    )
    tie = _get(sec, "tie_break", "game", "lookahead")
    if tie not in TIE_BREAKS:
        raise _fail("game.tie_break", f"expected one of {TIE_BREAKS}")
    try:
        budgets = Budgets(
            _number(_get(sec, "network_budget", "game"), "game.network_budget"),
            _number(_get(sec, "attacker_budget", "game"), "game.attacker_budget"),
        )
    except ConfigError:
        raise
    except ValidationError as exc:
        raise _fail("game", str(exc)) from None
    return GameSettings(costs, budgets, tie)


def _identification(raw: dict, topology: TreeTopology, ops) -> IdentificationSettings | None:
    if "identification" not in raw:
        return None
    sec = _section(raw, "identification")
    p = "identification"
    anchor = _operating_point(_get(sec, "anchor", p), f"{p}.anchor")
    deltas = _per_level(
        _get(sec, "deltas", p, 0.01), topology.depth, f"{p}.deltas", _number,
        lambda v: not isinstance(v, list),
    )
    windows = tuple(
        _integer(t, f"{p}.windows[{i}]")
        for i, t in enumerate(_list(_get(sec, "windows", p, [25]), f"{p}.windows"))
    )
    if any(t < 0 for t in windows):
        raise _fail(f"{p}.windows", "windows must be non-negative")
    flip = _list(_get(sec, "flip", p, [1, 1]), f"{p}.flip")
    normal_form = _get(sec, "normal_form", p, "product")
    if normal_form not in ("product", "recursive"):
        raise _fail(f"{p}.normal_form", "expected 'product' or 'recursive'")
    try:
        params = IdentificationParams(
            anchor=anchor,
            node_points=ops,
            deltas=deltas,
            window=windows[0] if windows else 0,
            prior0=_number(_get(sec, "prior0", p, 0.5), f"{p}.prior0"),
            flip=tuple(_number(v, f"{p}.flip[{i}]") for i, v in enumerate(flip)),
            hypothesis_mode=_get(sec, "hypothesis_mode", p, "window"),
            anchor_mode=_get(sec, "anchor_mode", p, "shared"),
        )
    except ConfigError:
        raise
    except ValidationError as exc:
        raise _fail(p, str(exc)) from None
    trials = _integer(_get(sec, "trials", p, 10_000), f"{p}.trials")
    return IdentificationSettings(params, windows, trials, normal_form)


def _fusion(raw: dict) -> FusionSettings | None:
    if "fusion" not in raw:
        return None
    sec = _section(raw, "fusion")
    delta = _number(_get(sec, "delta", "fusion", 0.1), "fusion.delta")
    if not 0 < delta <= 1:
        raise _fail("fusion.delta", "must lie in (0, 1]")
    trials = _integer(_get(sec, "trials", "fusion", 100_000), "fusion.trials")
    rep = tuple(
        _integer(m, f"fusion.replication[{i}]")
        for i, m in enumerate(_list(_get(sec, "replication", "fusion", []), "fusion.replication"))
    )
    if any(m < 1 for m in rep):
        raise _fail("fusion.replication", "copies must be >= 1")
    rep_trials = _integer(_get(sec, "replication_trials", "fusion", trials), "fusion.replication_trials")
    return FusionSettings(delta, trials, rep, rep_trials)


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    topo_sec = _section(raw, "topology")
    degrees = _list(_get(topo_sec, "degrees", "topology"), "topology.degrees")
    try:
        topology = TreeTopology(tuple(_integer(a, f"topology.degrees[{i}]") for i, a in enumerate(degrees)))
    except ConfigError:
        raise
    except ValidationError as exc:
        raise _fail("topology.degrees", str(exc)) from None
    ops = _per_level(
        _get(raw, "operating_points", ""), topology.depth, "operating_points", _operating_point,
        _is_pair,
    )
    config, placement = _placement(raw, topology)
    surface = _section(raw, "surface")
    coverage = _number(_get(surface, "coverage", "surface", 0.4), "surface.coverage")
    if not 0 <= coverage <= 1:
        raise _fail("surface.coverage", "must lie in [0, 1]")
    level = _integer(_get(surface, "level", "surface", 1), "surface.level")
    if not 1 <= level <= topology.depth:
        raise _fail("surface.level", f"must lie in 1..{topology.depth}")
    curve = _section(raw, "coverage_curve")
    step = _number(_get(curve, "step", "coverage_curve", 0.01), "coverage_curve.step")
    if not 0 < step < 0.5:
        raise _fail("coverage_curve.step", "must lie in (0, 0.5)")
    grid = _integer(_get(surface, "grid", "surface", 51), "surface.grid")
    if grid < 2:
        raise _fail("surface.grid", "must be >= 2")
    out = Path(raw.get("out", "results"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    workers = _integer(raw.get("workers", 1), "workers")
    if workers < 1:
        raise _fail("workers", "must be >= 1")
    return ExperimentConfig(
        topology=topology,
        operating_points=ops,
        attack=config,
        placement=placement,
        strategy=_strategy(raw, topology.depth),
        seed=_integer(raw.get("seed", 0), "seed"),
        workers=workers,
        out=out,
        grid=grid,
        surface_coverage=coverage,
        surface_level=level,
        coverage_step=step,
        game=_game(raw),
        identification=_identification(raw, topology, ops),
        fusion=_fusion(raw),
        raw=raw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(raw, path.parent)
