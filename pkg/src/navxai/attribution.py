"""Gradient attribution of the linear-velocity output onto scene objects.

Pipeline per control tick: build the 17-entry state, take the exact input
gradient of the squashed linear velocity, rescale the lidar slice to [0, 1],
then project each pooled sector's score onto the obstacle its contributing
ray hit. Objects no pooled ray touches score exactly 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .mlp import PolicyNetwork
from .world import (
    LIDAR_SLICE,
    N_SECTORS,
    Action,
    LidarScan,
    PooledScan,
    Pose,
    Scene,
    build_state,
)

OUTLINE_W_MIN = 0.5  # display units at importance 0
OUTLINE_W_MAX = 6.0  # display units at importance 1

TRACE_FORMAT = "navxai-trace/1"


@dataclass(frozen=True)
class RawAttribution:
    """Lidar slice of the velocity input gradient, plus the full 17-vector."""

    g: np.ndarray  # (15,)
    full_gradient: np.ndarray  # (17,)

    @property
    def goal_slice(self) -> np.ndarray:
        return self.full_gradient[N_SECTORS:]


@dataclass(frozen=True)
class ProcessedAttribution:
    g_star: np.ndarray  # (15,) in [0, 1]


@dataclass(frozen=True)
class ObjectImportance:
    """Per-obstacle score in [0, 1] and the induced total order."""

    scores: dict[str, float]
    ground_truth_ranking: tuple[str, ...]  # descending score, ties by ascending id


def vanilla_gradient(policy: PolicyNetwork, state: np.ndarray) -> RawAttribution:
    """Exact gradient of the squashed linear velocity with respect to the state."""
    full = policy.input_gradient(np.asarray(state, dtype=float), component=0)
    return RawAttribution(g=full[LIDAR_SLICE].copy(), full_gradient=full)


def postprocess(g: np.ndarray) -> ProcessedAttribution:
    """Min-max rescale |g| to [0, 1]; an all-equal |g| maps to all zeros."""
    g = np.asarray(g, dtype=float)
    if g.shape != (N_SECTORS,):
        raise ValueError(f"expected {N_SECTORS} attribution entries")
    if not np.all(np.isfinite(g)):
        raise ValueError("attribution entries must be finite")
    a = np.abs(g)
    lo = a.min()
    hi = a.max()
    if hi == lo:
        return ProcessedAttribution(g_star=np.zeros(N_SECTORS))
    return ProcessedAttribution(g_star=(a - lo) / (hi - lo))


def map_to_objects(
    processed: ProcessedAttribution,
    pooled: PooledScan,
    scan: LidarScan,
    scene: Scene,
) -> ObjectImportance:
    """Assign each sector's score to its contributing ray's obstacle, max-combined.

    Every scene obstacle appears in the result; those hit by no contributing
    ray keep exactly 0, so occluded objects tie at the bottom of the ranking.
    """
    scores = {ob.id: 0.0 for ob in scene.obstacles}
    for sector in range(N_SECTORS):
        ray = int(pooled.contributing_ray[sector])
        hit = scan.hit_ids[ray]
        if hit is not None:
            value = float(processed.g_star[sector])
            if value > scores[hit]:
                scores[hit] = value
    ranking = tuple(sorted(scores, key=lambda oid: (-scores[oid], oid)))
    return ObjectImportance(scores=scores, ground_truth_ranking=ranking)


def outline_width(score: float) -> float:
    """World-space outline thickness, affine in the importance score."""
    return OUTLINE_W_MIN + score * (OUTLINE_W_MAX - OUTLINE_W_MIN)


@dataclass(frozen=True)
class AttributionFrame:
    """Everything one control tick produces for display and scoring."""

    pose: Pose
    action: Action
    state: np.ndarray
    scan: LidarScan
    pooled: PooledScan
    raw: RawAttribution
    processed: ProcessedAttribution
    importance: ObjectImportance
    outline_widths: dict[str, float]


def attribution_frame(policy: PolicyNetwork, scene: Scene, pose: Pose) -> AttributionFrame:
    """One-call composition: state -> gradient -> rescale -> object projection."""
    state, pooled, lidar = build_state(scene, pose)
    raw = vanilla_gradient(policy, state)
    processed = postprocess(raw.g)
    importance = map_to_objects(processed, pooled, lidar, scene)
    widths = {oid: outline_width(s) for oid, s in importance.scores.items()}
    return AttributionFrame(
        pose=pose,
        action=policy.act(state),
        state=state,
        scan=lidar,
        pooled=pooled,
        raw=raw,
        processed=processed,
        importance=importance,
        outline_widths=widths,
    )


def export_trace(frames: Sequence[AttributionFrame], path: str | Path) -> None:
    """Per-frame CSV: timestep, 15 raw g, goal-slice gradient, 15 g*, scores."""
    if not frames:
        raise ValueError("no frames to export")
    object_ids = sorted(frames[0].importance.scores)
    for fr in frames:
        if sorted(fr.importance.scores) != object_ids:
            raise ValueError("frames span different scenes")
    header = (
        ["timestep"]
        + [f"raw_{i}" for i in range(N_SECTORS)]
        + ["goal_0", "goal_1"]
        + [f"gstar_{i}" for i in range(N_SECTORS)]
        + [f"score_{oid}" for oid in object_ids]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, fr in enumerate(frames):
            row = [str(t)]
            row += [f"{v:.10g}" for v in fr.raw.g]
            row += [f"{v:.10g}" for v in fr.raw.goal_slice]
            row += [f"{v:.10g}" for v in fr.processed.g_star]
            row += [f"{fr.importance.scores[oid]:.10g}" for oid in object_ids]
            w.writerow(row)


def load_trace(path: str | Path) -> dict[str, np.ndarray]:
    """Read a trace CSV back into arrays keyed raw, goal, gstar, scores."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    want = ["timestep"] + [f"raw_{i}" for i in range(N_SECTORS)] + ["goal_0", "goal_1"]
    want += [f"gstar_{i}" for i in range(N_SECTORS)]
    if header[: len(want)] != want or not all(c.startswith("score_") for c in header[len(want) :]):
        raise ValueError(f"not a trace CSV: {path}")
    data = np.array([[float(v) for v in r] for r in rows])
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"malformed trace CSV: {path}")
    return {
        "raw": data[:, 1 : 1 + N_SECTORS],
        "goal": data[:, 1 + N_SECTORS : 3 + N_SECTORS],
        "gstar": data[:, 3 + N_SECTORS : 3 + 2 * N_SECTORS],
        "scores": data[:, 3 + 2 * N_SECTORS :],
    }
