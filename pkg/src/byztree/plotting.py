"""Static figures for the CLI reports, rendered straight to PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


def _figure(width: float = 4.8, height: float = 3.4) -> Figure:
    fig = Figure(figsize=(width, height), layout="constrained")
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path: Path) -> Path:
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, dpi=120, metadata={"Software": None})
    return path


def _styled(ax) -> None:
    ax.grid(True, alpha=0.3)
    ax.tick_params(labelsize=9)


def plot_attack_surface(grid: np.ndarray, values: np.ndarray, coverage: float, path: Path) -> Path:
    fig = _figure()
    ax = fig.add_subplot()
    mesh = ax.pcolormesh(grid, grid, values.T, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=r"$D_k$ (nats)")
    i, j = np.unravel_index(np.argmin(values), values.shape)
    ax.plot(grid[i], grid[j], "r*", ms=10, label="minimum")
    ax.set_xlabel(r"$P_{1,0}$")
    ax.set_ylabel(r"$P_{0,1}$")
    ax.set_title(f"divergence over flip probabilities, t = {coverage:g}")
    ax.legend(loc="lower left", fontsize=8)
    return _save(fig, path)


def plot_coverage_curve(coverages: Sequence[float], values: Sequence[float], path: Path) -> Path:
    fig = _figure()
    ax = fig.add_subplot()
    ax.plot(coverages, values, "-o", ms=2.5)
    ax.set_xlabel("coverage t")
    ax.set_ylabel(r"min $D_k$ (nats)")
    ax.set_xlim(0, 0.5)
    ax.set_ylim(bottom=0)
    _styled(ax)
    return _save(fig, path)


def plot_payoff_table(
    rows: Sequence[tuple[tuple[int, ...], bool, float]],
    chosen: tuple[int, ...] | None,
    path: Path,
) -> Path:
    """Bars of min divergence per attack, feasible ones highlighted."""
    fig = _figure(max(4.8, 0.18 * len(rows)), 3.4)
    ax = fig.add_subplot()
    x = np.arange(len(rows))
    colors = ["tab:blue" if feasible else "lightgray" for _, feasible, _ in rows]
    ax.bar(x, [d for _, _, d in rows], color=colors)
    if chosen is not None:
        for i, (b, _, d) in enumerate(rows):
            if b == chosen:
                ax.bar([i], [d], color="tab:red", label=f"equilibrium B = {b}")
        ax.legend(fontsize=8)
    ax.set_xticks(x, ["".join(f"{v}," for v in b).rstrip(",") for b, _, _ in rows],
                  rotation=90, fontsize=6)
    ax.set_xlabel("attack configuration")
    ax.set_ylabel("min D (nats)")
    return _save(fig, path)


def plot_isolation(
    windows: Sequence[int],
    exact: np.ndarray,
    mc: np.ndarray | None,
    path: Path,
) -> Path:
    """Isolation probability against window length, one curve per level."""
    fig = _figure()
    ax = fig.add_subplot()
    for k in range(exact.shape[1]):
        (line,) = ax.plot(windows, exact[:, k], "-", label=f"level {k + 1}")
        if mc is not None:
            ax.plot(windows, mc[:, k], "o", ms=3, color=line.get_color())
    ax.set_xlabel("window T")
    ax.set_ylabel("isolation probability")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=7)
    _styled(ax)
    return _save(fig, path)


def plot_replication(copies: Sequence[int], neg_log_pm: Sequence[float], slope: float,
                     intercept: float, base_divergence: float, path: Path) -> Path:
    fig = _figure()
    ax = fig.add_subplot()
    m = np.asarray(copies, dtype=float)
    ax.plot(m, neg_log_pm, "o", label=r"$-\ln \hat P_M$")
    ax.plot(m, slope * m + intercept, "-", label=f"fit, slope {slope:.3g}")
    ax.plot(m, base_divergence * m + intercept, "--", label=f"slope D = {base_divergence:.3g}")
    ax.set_xlabel("copies m")
    ax.legend(fontsize=8)
    _styled(ax)
    return _save(fig, path)
