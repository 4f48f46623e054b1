"""Trajectory figures for simulation runs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import SimRun, SimulationError  # noqa: E402


def plot_trajectories(run: SimRun, path, subsystem: int | None = None, max_trials: int = 10,
                      band: tuple[float, float] | None = None, title: str | None = None) -> str:
    """Plot the first ``max_trials`` recorded trajectories of one subsystem.

    ``band`` shades the safe interval. The figure is written to ``path``
    (format from the suffix) and the path is returned.
    """
    if run.config.record != "full":
        raise SimulationError("plotting needs record='full'")
    sub = run.tracked[0] if subsystem is None else subsystem
    pos = run.tracked.index(sub)
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    steps = None
    for r in run.results[:max_trials]:
        y = r.states[:, pos]
        steps = np.arange(len(y))
        ax.plot(steps, y, lw=0.9, alpha=0.85)
    if band is not None and steps is not None:
        ax.axhspan(band[0], band[1], color="0.85", zorder=0, label="safe band")
        ax.axhline(band[0], color="0.4", lw=0.6, ls="--")
        ax.axhline(band[1], color="0.4", lw=0.6, ls="--")
        ax.legend(loc="upper right", fontsize=8, frameon=False)
    ax.set_xlabel("time step k")
    ax.set_ylabel(f"state of subsystem {sub + 1}")
    ax.set_title(title or f"{min(max_trials, len(run.results))} noise realisations")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
