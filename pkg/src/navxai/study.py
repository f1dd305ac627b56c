"""Ranking-study harness.

Four display conditions (object-outline and ray channels on/off) crossed in a
counterbalanced block design: 4 blocks of 12 trials over 48 scenarios. Each
trial rolls the policy for 30 control ticks, freezes the last attribution
frame, and scores a submitted obstacle ranking against the frozen ground
truth with Kendall's tau. Display flags gate what a UI shows, never what is
computed.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attribution import AttributionFrame, attribution_frame
from .mlp import PolicyNetwork
from .world import (
    SCENARIO_FORMAT,
    Circle,
    Episode,
    Outcome,
    Rect,
    Scene,
    random_scene,
    scene_from_dict,
    scene_to_dict,
    surface_distance,
    wrap_angle,
)

TRIAL_TICKS = 30  # 3 s at 10 Hz
LINGER_FRAMES = 10  # 1 s frozen display
N_BLOCKS = 4
TRIALS_PER_BLOCK = 12
N_SCENARIOS = N_BLOCKS * TRIALS_PER_BLOCK
STUDY_OBSTACLES = 5
MIN_START_GOAL = 2.0  # m, straight-line segment lower bound


# ---------------------------------------------------------------------------
# conditions and plans


@dataclass(frozen=True)
class Condition:
    xai_visible: bool  # importance outlines channel
    lidar_visible: bool  # ray rendering channel

    @property
    def label(self) -> str:
        if self.xai_visible and self.lidar_visible:
            return "xai+lidar"
        if self.xai_visible:
            return "xai"
        if self.lidar_visible:
            return "lidar"
        return "none"


CONDITIONS = (
    Condition(xai_visible=True, lidar_visible=True),
    Condition(xai_visible=True, lidar_visible=False),
    Condition(xai_visible=False, lidar_visible=True),
    Condition(xai_visible=False, lidar_visible=False),
)
CONDITION_LABELS = {(c.xai_visible, c.lidar_visible): c.label for c in CONDITIONS}
BLOCK_ORDERS = tuple(itertools.permutations(CONDITIONS))  # all 4! = 24 orderings


def condition_from_label(label: str) -> Condition:
    for c in CONDITIONS:
        if c.label == label:
            return c
    raise ValueError(f"unknown condition label {label!r}")


@dataclass(frozen=True)
class Scenario:
    id: str
    scene: Scene

    @property
    def observer_position(self) -> tuple[float, float] | None:
        return self.scene.observer


@dataclass(frozen=True)
class StudyPlan:
    participant: int
    block_order: tuple[Condition, ...]  # one of the 24 counterbalanced orders
    block_scenarios: tuple[tuple[str, ...], ...]  # 4 blocks of 12 scenario ids

    def __post_init__(self) -> None:
        if len(self.block_order) != N_BLOCKS or set(self.block_order) != set(CONDITIONS):
            raise ValueError("block order must be a permutation of the four conditions")
        flat = [sid for block in self.block_scenarios for sid in block]
        if len(self.block_scenarios) != N_BLOCKS or any(
            len(b) != TRIALS_PER_BLOCK for b in self.block_scenarios
        ):
            raise ValueError(f"need {N_BLOCKS} blocks of {TRIALS_PER_BLOCK} scenarios")
        if len(set(flat)) != len(flat):
            raise ValueError("scenario ids must be unique across blocks")


def make_study_plan(
    participant_index: int, scenario_ids: Sequence[str], *, seed: int = 0
) -> StudyPlan:
    """Counterbalanced plan: order = permutation table row (participant mod 24),
    scenarios shuffled per participant and split into blocks."""
    if participant_index < 0:
        raise ValueError("participant_index must be non-negative")
    if len(scenario_ids) != N_SCENARIOS:
        raise ValueError(f"need exactly {N_SCENARIOS} scenario ids")
    order = BLOCK_ORDERS[participant_index % len(BLOCK_ORDERS)]
    rng = np.random.default_rng([seed, participant_index])
    shuffled = list(scenario_ids)
    rng.shuffle(shuffled)
    blocks = tuple(
        tuple(shuffled[b * TRIALS_PER_BLOCK : (b + 1) * TRIALS_PER_BLOCK])
        for b in range(N_BLOCKS)
    )
    return StudyPlan(participant=participant_index, block_order=order, block_scenarios=blocks)


# ---------------------------------------------------------------------------
# scenario generation and serialization


def generate_scenarios(seed: int, count: int = N_SCENARIOS) -> list[Scenario]:
    """Seeded study scenes: exactly 5 obstacles, start facing the goal, observer set."""
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        scene = random_scene(
            rng,
            n_obstacles=STUDY_OBSTACLES,
            min_start_goal=MIN_START_GOAL,
            face_goal=True,
            observer=True,
        )
        scene = replace(scene, seed=seed)
        out.append(Scenario(id=f"s{i:02d}", scene=scene))
    return out


def save_scenarios(scenarios: Sequence[Scenario], path: str | Path, *, seed: int | None = None) -> None:
    doc = {
        "format": SCENARIO_FORMAT,
        "seed": seed,
        "scenarios": [{"id": s.id, "scene": scene_to_dict(s.scene)} for s in scenarios],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_scenarios(path: str | Path) -> list[Scenario]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SCENARIO_FORMAT:
        raise ValueError(f"expected format {SCENARIO_FORMAT!r}, got {doc.get('format')!r}")
    out = [Scenario(id=str(e["id"]), scene=scene_from_dict(e["scene"])) for e in doc["scenarios"]]
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise ValueError("scenario ids must be unique")
    return out


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialRecord:
    scenario_id: str
    condition: Condition
    frames: tuple[AttributionFrame, ...]  # one per control tick, <= 30
    frozen: AttributionFrame  # last frame; its importance is the ground truth
    outcome: Outcome  # NONE when the full 3 s elapsed without termination
    submitted_ranking: tuple[str, ...] | None = None
    tau: float | None = None

    @property
    def ground_truth(self) -> tuple[str, ...]:
        return self.frozen.importance.ground_truth_ranking


def run_trial(policy: PolicyNetwork, scenario: Scenario, condition: Condition) -> TrialRecord:
    """Roll 30 ticks (or until termination), computing a frame every tick.

    The condition is recorded for display gating only; trajectories and the
    frozen ground truth are identical across conditions.
    """
    scene = scenario.scene
    ep = Episode(scene, max_steps=TRIAL_TICKS)
    ep.reset()
    frames = []
    outcome = Outcome.NONE
    for _ in range(TRIAL_TICKS):
        frame = attribution_frame(policy, scene, ep.pose)
        frames.append(frame)
        res = ep.step(frame.action)
        if res.outcome.terminal:
            outcome = res.outcome
            break
    if outcome is Outcome.TIMEOUT:
        # the 30-tick budget is the nominal trial length, not a failure
        outcome = Outcome.NONE
    return TrialRecord(
        scenario_id=scenario.id,
        condition=condition,
        frames=tuple(frames),
        frozen=frames[-1],
        outcome=outcome,
    )


# ---------------------------------------------------------------------------
# Kendall's tau


def kendall_tau(ranking_a: Sequence[str], ranking_b) -> float:
    """Tau-b from exact pair counts; reduces to tau-a when neither side has ties.

    ranking_a must be a permutation (best first). ranking_b is either another
    total order or a mapping id -> score where equal scores tie (higher
    score ranks earlier).
    """
    ids = list(ranking_a)
    n = len(ids)
    if n < 2:
        raise ValueError("tau needs at least 2 elements")
    if len(set(ids)) != n:
        raise ValueError("ranking_a contains duplicates")
    if isinstance(ranking_b, Mapping):
        if set(ranking_b) != set(ids):
            raise ValueError("rankings must cover the same elements")
        xb = [-float(ranking_b[e]) for e in ids]
    else:
        other = list(ranking_b)
        if len(other) != n or set(other) != set(ids):
            raise ValueError("rankings must cover the same elements")
        pos = {e: i for i, e in enumerate(other)}
        xb = [float(pos[e]) for e in ids]
    xa = list(range(n))

    n0 = n * (n - 1) // 2
    concordant = discordant = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            a_cmp = (xa[i] > xa[j]) - (xa[i] < xa[j])
            b_cmp = (xb[i] > xb[j]) - (xb[i] < xb[j])
            if a_cmp == 0:
                ties_a += 1
            if b_cmp == 0:
                ties_b += 1
            prod = a_cmp * b_cmp
            if prod > 0:
                concordant += 1
            elif prod < 0:
                discordant += 1
    if ties_a == n0 or ties_b == n0:
        raise ValueError("tau undefined: one ranking is entirely tied")
    if ties_a == 0 and ties_b == 0:
        return (concordant - discordant) / n0
    return (concordant - discordant) / math.sqrt((n0 - ties_a) * (n0 - ties_b))


# ---------------------------------------------------------------------------
# baseline rankers

STRATEGIES = ("proximity", "path-proximity", "front-cone", "random", "oracle")


def _object_distance(scene_shape, px: float, py: float) -> float:
    return surface_distance(scene_shape, px, py)


def _segment_distance(shape, ax: float, ay: float, bx: float, by: float) -> float:
    """Distance from a shape surface to the segment a-b (ternary search; the
    point-to-shape distance is convex along the segment)."""
    lo, hi = 0.0, 1.0

    def at(t: float) -> float:
        return surface_distance(shape, ax + t * (bx - ax), ay + t * (by - ay))

    for _ in range(100):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if at(m1) <= at(m2):
            hi = m2
        else:
            lo = m1
    return at((lo + hi) / 2.0)


def _shape_center(shape) -> tuple[float, float]:
    if isinstance(shape, (Rect, Circle)):
        return shape.cx, shape.cy
    raise TypeError(f"unknown shape {type(shape)!r}")


def baseline_rank(
    strategy: str,
    scenario: Scenario,
    frozen: AttributionFrame,
    rng: np.random.Generator | None = None,
) -> tuple[str, ...]:
    """Heuristic obstacle ranking at the frozen pose; ties break by ascending id."""
    scene = scenario.scene
    pose = frozen.pose
    ids = sorted(scene.obstacle_ids)
    shapes = {ob.id: ob.shape for ob in scene.obstacles}
    if strategy == "proximity":
        return tuple(sorted(ids, key=lambda o: (_object_distance(shapes[o], pose.x, pose.y), o)))
    if strategy == "path-proximity":
        sx, sy = scene.start.x, scene.start.y
        gx, gy = scene.goal
        return tuple(
            sorted(ids, key=lambda o: (_segment_distance(shapes[o], sx, sy, gx, gy), o))
        )
    if strategy == "front-cone":
        def in_cone(o: str) -> bool:
            cx, cy = _shape_center(shapes[o])
            bearing = wrap_angle(math.atan2(cy - pose.y, cx - pose.x) - pose.heading)
            return abs(bearing) <= math.pi / 3.0

        def key(o: str):
            return (not in_cone(o), _object_distance(shapes[o], pose.x, pose.y), o)

        return tuple(sorted(ids, key=key))
    if strategy == "random":
        if rng is None:
            raise ValueError("random strategy needs an rng")
        order = list(ids)
        rng.shuffle(order)
        return tuple(order)
    if strategy == "oracle":
        return frozen.importance.ground_truth_ranking
    raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")


# ---------------------------------------------------------------------------
# scoring and aggregation


def score_ranking(
    record: TrialRecord, ranking: Sequence[str], *, scoring: str = "resolved"
) -> float:
    """Tau of a submitted permutation against the frozen ground truth.

    resolved (default): compare against the tie-resolved total order, so a
    perfect submission scores exactly 1.0. tie-aware: tau-b against the raw
    scores, where occlusion ties cap the attainable tau below 1.
    """
    if scoring == "resolved":
        return kendall_tau(list(ranking), list(record.ground_truth))
    if scoring == "tie-aware":
        return kendall_tau(list(ranking), record.frozen.importance.scores)
    raise ValueError(f"unknown scoring mode {scoring!r}")


@dataclass(frozen=True)
class StudyResultRow:
    participant: int
    block: int
    condition: Condition
    trial: int
    scenario_id: str
    tau: float


@dataclass(frozen=True)
class ConditionStats:
    mean: float
    sd: float  # population SD (ddof = 0)
    n: int


@dataclass(frozen=True)
class StudySummary:
    per_condition: dict[str, ConditionStats]
    per_participant: dict[int, dict[str, float]]  # participant -> condition label -> mean


def aggregate(rows: Sequence[StudyResultRow]) -> StudySummary:
    if not rows:
        raise ValueError("no rows to aggregate")
    by_cond: dict[str, list[float]] = {}
    by_part: dict[int, dict[str, list[float]]] = {}
    for r in rows:
        by_cond.setdefault(r.condition.label, []).append(r.tau)
        by_part.setdefault(r.participant, {}).setdefault(r.condition.label, []).append(r.tau)
    per_condition = {
        label: ConditionStats(
            mean=float(np.mean(taus)), sd=float(np.std(taus)), n=len(taus)
        )
        for label, taus in by_cond.items()
    }
    per_participant = {
        p: {label: float(np.mean(taus)) for label, taus in conds.items()}
        for p, conds in by_part.items()
    }
    return StudySummary(per_condition=per_condition, per_participant=per_participant)


def results_csv_text(rows: Sequence[StudyResultRow]) -> str:
    """Long-format CSV; fixed float formatting keeps reruns byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["participant", "block", "condition", "trial", "scenario", "tau"])
    for r in rows:
        w.writerow(
            [r.participant, r.block, r.condition.label, r.trial, r.scenario_id, f"{r.tau:.6f}"]
        )
    return buf.getvalue()


def write_results_csv(rows: Sequence[StudyResultRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(results_csv_text(rows))


# ---------------------------------------------------------------------------
# headless study driver


def run_study(
    policy: PolicyNetwork,
    scenarios: Sequence[Scenario],
    *,
    strategy: str = "oracle",
    participants: int = 1,
    seed: int = 0,
    scoring: str = "resolved",
) -> list[StudyResultRow]:
    """Simulate whole participants answering with a baseline ranker."""
    if participants <= 0:
        raise ValueError("participants must be positive")
    by_id = {s.id: s for s in scenarios}
    if len(by_id) != N_SCENARIOS:
        raise ValueError(f"need exactly {N_SCENARIOS} uniquely-identified scenarios")
    trial_cache: dict[str, TrialRecord] = {}
    rows: list[StudyResultRow] = []
    for p in range(participants):
        plan = make_study_plan(p, sorted(by_id), seed=seed)
        for b, condition in enumerate(plan.block_order):
            for t, sid in enumerate(plan.block_scenarios[b]):
                # dynamics are condition-independent, so the rollout is shareable
                if sid not in trial_cache:
                    trial_cache[sid] = run_trial(policy, by_id[sid], condition)
                record = replace(trial_cache[sid], condition=condition)
                rng = np.random.default_rng([seed, p, b, t])
                ranking = baseline_rank(strategy, by_id[sid], record.frozen, rng)
                tau = score_ranking(record, ranking, scoring=scoring)
                rows.append(
                    StudyResultRow(
                        participant=p,
                        block=b,
                        condition=condition,
                        trial=t,
                        scenario_id=sid,
                        tau=tau,
                    )
                )
    return rows
