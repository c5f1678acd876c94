"""Render zone models and simulation logs to PNG figures.

Figures are a convenience layer next to the CSV plot data; every number
they show is also available in the exported series. The Agg backend is
forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulator import ScenarioConfig, SimLog  # noqa: E402
from .zonelearn import ZoneModel  # noqa: E402

__all__ = ["render_zone_figure", "render_trajectory_figure", "render_h_figure"]

_BOUNDARY_SAMPLES = 128


def render_zone_figure(model: ZoneModel, path) -> None:
    """One boundary curve per modeled speed, body frame, equal aspect."""
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    cmap = plt.get_cmap("viridis")
    n = max(len(model), 1)
    for i, (speed, zone) in enumerate(zip(model.speeds, model.zones)):
        pts = zone.as_ellipse().boundary_points(_BOUNDARY_SAMPLES)
        closed = np.vstack([pts, pts[:1]])
        ax.plot(closed[:, 0], closed[:, 1], color=cmap(i / n), label=f"{speed:.1f} m/s")
    ax.plot(0.0, 0.0, marker="^", color="black", markersize=8)
    ax.set_xlabel("forward offset [m]")
    ax.set_ylabel("lateral offset [m]")
    ax.set_title("minimum social zone by walking speed")
    ax.set_aspect("equal")
    ax.grid(True, alpha=0.3)
    if len(model):
        ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trajectory_figure(log: SimLog, path, config: ScenarioConfig | None = None) -> None:
    """Robot path colored by time, plus walls/humans/goal when available."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    xy = log.states[:, :2]
    sc = ax.scatter(xy[:, 0], xy[:, 1], c=log.times, cmap="Blues", s=10, label="robot")
    fig.colorbar(sc, ax=ax, label="time [s]")
    if np.isfinite(log.goal).all():
        ax.plot(*log.goal, marker="D", color="tab:blue", markersize=9)
    if config is not None:
        for wall in config.walls:
            ax.plot(
                [wall.endpoint_a[0], wall.endpoint_b[0]],
                [wall.endpoint_a[1], wall.endpoint_b[1]],
                color="black", linewidth=2.5,
            )
        stride = max(len(log.times) // 8, 1)
        from .controller import build_step_barriers
        from .simulator import _humans_at

        for k in range(0, len(log.times), stride):
            humans = _humans_at(config, k)
            for h in humans:
                ax.plot(*h.position, marker="o", color="tab:red", markersize=4, alpha=0.6)
            if config.zone_model is not None:
                for bar in build_step_barriers(humans, [], config.zone_model, config.mpc, 0)[0]:
                    pts = bar.shape.boundary_points(_BOUNDARY_SAMPLES)
                    closed = np.vstack([pts, pts[:1]])
                    ax.plot(closed[:, 0], closed[:, 1], color="tab:red",
                            alpha=0.25, linewidth=0.8)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"trajectory: {log.scenario}")
    ax.set_aspect("equal")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_h_figure(log: SimLog, path) -> None:
    """Barrier values over time with the h = 0 safety line."""
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    for j, name in enumerate(log.barrier_names):
        ax.plot(log.times, log.h_values[:, j], label=name, linewidth=1.2)
    ax.axhline(0.0, color="black", linewidth=0.8, linestyle="--")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("h [m]")
    ax.set_title(f"barrier values: {log.scenario}")
    ax.grid(True, alpha=0.3)
    if log.barrier_names:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
