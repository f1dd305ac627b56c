"""Figure exports: attribution histograms and top-down scene maps.

Every export writes the plotted numbers to CSV next to the image, so
downstream checks can diff data instead of pixels.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Circle as CirclePatch
from matplotlib.patches import Polygon, Rectangle

from .attribution import attribution_frame, load_trace
from .mlp import PolicyNetwork
from .world import (
    GOAL_RADIUS,
    N_RAYS,
    N_SECTORS,
    RAYS_PER_SECTOR,
    ROBOT_RADIUS,
    Circle,
    Episode,
    Rect,
    Scene,
)

HIST_BINS = 60


def _histogram_series(values: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    counts, edges = np.histogram(values, bins=bins)
    return counts, edges


def export_histogram(
    trace_paths: Sequence[str | Path], out_image: str | Path, *, bins: int = HIST_BINS
) -> Path:
    """Distribution of raw attribution (lidar slice vs goal slice) and of g*.

    Counts use a log scale; the raw panel overlays the two slices on shared
    bins so their spread is directly comparable. Returns the CSV path.
    """
    if not trace_paths:
        raise ValueError("no trace files given")
    raws, goals, gstars = [], [], []
    for p in trace_paths:
        data = load_trace(p)
        raws.append(data["raw"].ravel())
        goals.append(data["goal"].ravel())
        gstars.append(data["gstar"].ravel())
    raw = np.concatenate(raws)
    goal = np.concatenate(goals)
    gstar = np.concatenate(gstars)

    lo = min(raw.min(), goal.min())
    hi = max(raw.max(), goal.max())
    if lo == hi:
        lo, hi = lo - 1e-12, hi + 1e-12
    shared = np.linspace(lo, hi, bins + 1)
    raw_counts, _ = np.histogram(raw, bins=shared)
    goal_counts, _ = np.histogram(goal, bins=shared)
    gstar_counts, gstar_edges = _histogram_series(gstar, bins)

    fig, (ax_raw, ax_star) = plt.subplots(1, 2, figsize=(11, 4))
    width = np.diff(shared)
    ax_raw.bar(shared[:-1], raw_counts, width=width, align="edge", alpha=0.6, label="lidar slice")
    ax_raw.bar(shared[:-1], goal_counts, width=width, align="edge", alpha=0.6, label="goal slice")
    ax_raw.set_yscale("log")
    ax_raw.set_xlabel("raw gradient value")
    ax_raw.set_ylabel("count (log)")
    ax_raw.set_title("raw attribution by input slice")
    ax_raw.legend()
    ax_star.bar(
        gstar_edges[:-1], gstar_counts, width=np.diff(gstar_edges), align="edge", color="#444"
    )
    ax_star.set_yscale("log")
    ax_star.set_xlabel("g* value")
    ax_star.set_title("post-processed attribution")
    fig.tight_layout()
    out_image = Path(out_image)
    fig.savefig(out_image, dpi=120)
    plt.close(fig)

    out_csv = out_image.with_suffix(".csv")
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "bin_left", "bin_right", "count"])
        for name, counts, edges in (
            ("raw_lidar", raw_counts, shared),
            ("raw_goal", goal_counts, shared),
            ("gstar", gstar_counts, gstar_edges),
        ):
            for i, c in enumerate(counts):
                w.writerow([name, f"{edges[i]:.10g}", f"{edges[i + 1]:.10g}", int(c)])
    return out_csv


def export_scene_map(
    policy: PolicyNetwork, scene: Scene, timestep: int, out_image: str | Path
) -> Path:
    """Top-down map at one trial timestep: robot triangle, rays colored by g*,
    obstacle outlines weighted by importance, goal disc. Returns the CSV path.
    """
    if timestep < 0:
        raise ValueError("timestep must be >= 0")
    ep = Episode(scene)
    ep.reset()
    for k in range(timestep):
        frame = attribution_frame(policy, scene, ep.pose)
        res = ep.step(frame.action)
        if res.outcome.terminal:
            raise ValueError(f"trial ended at step {k + 1}, before timestep {timestep}")
    frame = attribution_frame(policy, scene, ep.pose)
    pose = frame.pose
    g_star = frame.processed.g_star

    fig, ax = plt.subplots(figsize=(7, 7))
    b = scene.bounds
    ax.add_patch(
        Rectangle(
            (b.xmin, b.ymin), b.xmax - b.xmin, b.ymax - b.ymin, fill=False, color="black"
        )
    )

    cmap = plt.get_cmap("inferno")
    angles = pose.heading + (2.0 * math.pi / N_RAYS) * np.arange(N_RAYS)
    dists = frame.scan.distances
    for i in range(N_RAYS):
        color = cmap(float(g_star[i // RAYS_PER_SECTOR]))
        ax.plot(
            [pose.x, pose.x + math.cos(angles[i]) * dists[i]],
            [pose.y, pose.y + math.sin(angles[i]) * dists[i]],
            color=color,
            linewidth=0.4,
            alpha=0.5,
            zorder=1,
        )

    for ob in scene.obstacles:
        lw = frame.outline_widths[ob.id]
        if isinstance(ob.shape, Rect):
            ax.add_patch(
                Rectangle(
                    (ob.shape.cx - ob.shape.hx, ob.shape.cy - ob.shape.hy),
                    2 * ob.shape.hx,
                    2 * ob.shape.hy,
                    facecolor="#cccccc",
                    edgecolor="white",
                    linewidth=lw,
                    zorder=2,
                )
            )
        elif isinstance(ob.shape, Circle):
            ax.add_patch(
                CirclePatch(
                    (ob.shape.cx, ob.shape.cy),
                    ob.shape.r,
                    facecolor="#cccccc",
                    edgecolor="white",
                    linewidth=lw,
                    zorder=2,
                )
            )
        ax.annotate(ob.id, (_center(ob.shape)), ha="center", fontsize=8, zorder=4)

    gx, gy = scene.goal
    ax.add_patch(CirclePatch((gx, gy), GOAL_RADIUS, color="green", alpha=0.7, zorder=2))
    ax.plot([pose.x, gx], [pose.y, gy], color="green", linestyle=":", linewidth=1, zorder=2)
    tri = _robot_triangle(pose.x, pose.y, pose.heading)
    ax.add_patch(Polygon(tri, closed=True, color="tab:blue", zorder=3))

    ax.set_xlim(b.xmin - 0.3, b.xmax + 0.3)
    ax.set_ylim(b.ymin - 0.3, b.ymax + 0.3)
    ax.set_aspect("equal")
    ax.set_facecolor("#202020")
    ax.set_title(f"timestep {timestep}")
    fig.tight_layout()
    out_image = Path(out_image)
    fig.savefig(out_image, dpi=120)
    plt.close(fig)

    out_csv = out_image.with_suffix(".csv")
    ids = sorted(frame.importance.scores)
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "key", "value_1", "value_2", "value_3"])
        w.writerow(["pose", "xyheading", f"{pose.x:.10g}", f"{pose.y:.10g}", f"{pose.heading:.10g}"])
        for s in range(N_SECTORS):
            w.writerow(
                [
                    "sector",
                    str(s),
                    f"{frame.pooled.distances[s]:.10g}",
                    str(int(frame.pooled.contributing_ray[s])),
                    f"{g_star[s]:.10g}",
                ]
            )
        for oid in ids:
            w.writerow(
                [
                    "object",
                    oid,
                    f"{frame.importance.scores[oid]:.10g}",
                    f"{frame.outline_widths[oid]:.10g}",
                    "",
                ]
            )
    return out_csv


def _center(shape) -> tuple[float, float]:
    return shape.cx, shape.cy


def _robot_triangle(x: float, y: float, heading: float) -> list[tuple[float, float]]:
    r = ROBOT_RADIUS
    pts = []
    for ang, scale in ((0.0, 1.4), (2.5, 1.0), (-2.5, 1.0)):
        a = heading + ang
        pts.append((x + math.cos(a) * r * scale, y + math.sin(a) * r * scale))
    return pts
