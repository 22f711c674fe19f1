"""Matplotlib rendering for the reporting path (file output only)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .world import MUD, TerrainWorld

STACK_COLORS = {"proposed": "tab:green", "baseline1": "tab:red", "baseline2": "tab:blue"}


def _extent(world: TerrainWorld):
    res = world.elevation.resolution
    ox, oy = world.elevation.origin
    ex, ey = world.elevation.extent
    return (ox - res / 2, ox + ex - res / 2, oy - res / 2, oy + ey - res / 2)


def draw_world(ax, world: TerrainWorld, layer: str = "traversability"):
    grid = world.traversability if layer == "traversability" else world.elevation
    im = ax.imshow(grid.values, origin="lower", extent=_extent(world),
                   cmap="terrain" if layer == "elevation" else "YlOrRd",
                   interpolation="nearest")
    if MUD in world.terrain_types.labels:
        mud = world.terrain_types.values == world.terrain_types.labels.index(MUD)
        overlay = np.zeros((*mud.shape, 4))
        overlay[mud] = (0.35, 0.2, 0.05, 0.35)
        ax.imshow(overlay, origin="lower", extent=_extent(world), interpolation="nearest")
    for ob in world.obstacles:
        ax.add_patch(plt.Circle((ob.x, ob.y), ob.radius, color="k", alpha=0.8))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    return im


def plot_paths(world: TerrainWorld, paths_by_stack: dict, start, goal, out_path,
               title: str = ""):
    """Driven paths over the traversability and elevation layers, side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(13, 5), sharey=True)
    for ax, layer in zip(axes, ("traversability", "elevation")):
        im = draw_world(ax, world, layer)
        fig.colorbar(im, ax=ax, shrink=0.8, label=layer)
        for stack, logs in paths_by_stack.items():
            color = STACK_COLORS.get(stack, "gray")
            for j, log in enumerate(logs):
                ax.plot(log.states[:, 0], log.states[:, 1], color=color, lw=1.2,
                        alpha=0.8, label=stack if j == 0 else None)
        ax.plot(*start, "k^", ms=9, label="start")
        ax.plot(*goal, "k*", ms=12, label="goal")
        ax.set_title(layer)
    axes[0].legend(loc="upper left", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def plot_summary(report: dict, out_path):
    """Bar chart of success counts and mean successful path lengths."""
    stacks = list(report["stacks"])
    succ = [report["stacks"][s]["successes"] for s in stacks]
    lens = [report["stacks"][s]["mean_success_path_length"] or 0.0 for s in stacks]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    colors = [STACK_COLORS.get(s, "gray") for s in stacks]
    ax1.bar(stacks, succ, color=colors)
    ax1.set_ylabel("successful runs")
    ax2.bar(stacks, lens, color=colors)
    ax2.set_ylabel("mean successful path length [m]")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", rotation=15)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
