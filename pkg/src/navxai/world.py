"""Deterministic 2D navigation world.

Geometry primitives, analytic 360-ray lidar casting, sector min-pooling,
differential-drive kinematics and episode bookkeeping. Everything here is
pure value-type math: no hidden state, safe to call concurrently.

Conventions: angles are radians in [-pi, pi), ray 0 points along the robot
heading and ray indices increase counterclockwise. Distances are meters.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_RAYS = 360
N_SECTORS = 15
RAYS_PER_SECTOR = N_RAYS // N_SECTORS
MAX_RANGE = 6.0  # lidar detection range, m

STATE_DIM = 17
LIDAR_SLICE = slice(0, N_SECTORS)
GOAL_SLICE = slice(N_SECTORS, STATE_DIM)
GOAL_RANGE_NORM = 12.0  # fixed scene-diagonal constant for goal-distance normalization

CONTROL_HZ = 10.0
DT = 1.0 / CONTROL_HZ
ROBOT_RADIUS = 0.2
GOAL_RADIUS = 0.3  # m, reach tolerance around the goal point
V_MAX = 1.0  # m/s, linear velocity bound (v in [0, V_MAX])
OMEGA_MAX = 1.0  # rad/s, angular velocity bound (|omega| <= OMEGA_MAX)

SCENE_FORMAT = "navxai-scene/1"
SCENARIO_FORMAT = "navxai-scenarios/1"


class SceneFormatError(ValueError):
    """Raised when a scene/scenario file does not match the documented schema."""


def wrap_angle(a: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float  # radians in [-pi, pi)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise ValueError("pose components must be finite")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle: center and positive half-extents."""

    cx: float
    cy: float
    hx: float
    hy: float

    def __post_init__(self) -> None:
        if self.hx <= 0.0 or self.hy <= 0.0:
            raise ValueError("rectangle half-extents must be positive")


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self) -> None:
        if self.r <= 0.0:
            raise ValueError("circle radius must be positive")


Shape = Rect | Circle


@dataclass(frozen=True)
class Obstacle:
    id: str
    shape: Shape


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise ValueError("bounds must have positive extent")

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (
            self.xmin + margin <= x <= self.xmax - margin
            and self.ymin + margin <= y <= self.ymax - margin
        )


@dataclass(frozen=True)
class Scene:
    """A navigation world: obstacles, a goal, a start pose and arena bounds."""

    obstacles: tuple[Obstacle, ...]
    goal: tuple[float, float]
    start: Pose
    bounds: Bounds
    observer: tuple[float, float] | None = None  # UI viewpoint only, never affects dynamics
    seed: int | None = None
    _id_lut: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = [ob.id for ob in self.obstacles]
        if len(set(ids)) != len(ids):
            raise ValueError("obstacle ids must be unique within a scene")
        # index -1 maps to None (no hit)
        lut = np.array(ids + [None], dtype=object)
        object.__setattr__(self, "_id_lut", lut)

    @property
    def obstacle_ids(self) -> list[str]:
        return [ob.id for ob in self.obstacles]

    def validate(self) -> None:
        """Check placement invariants: start and goal clear of every obstacle."""
        for label, point in (("start", (self.start.x, self.start.y)), ("goal", self.goal)):
            if not self.bounds.contains(*point):
                raise ValueError(f"{label} outside scene bounds")
            for ob in self.obstacles:
                if surface_distance(ob.shape, point[0], point[1]) <= 0.0:
                    raise ValueError(f"{label} lies inside obstacle {ob.id!r}")


@dataclass(frozen=True)
class LidarScan:
    """360 ray distances in (0, MAX_RANGE] plus the obstacle each ray hit.

    distance == MAX_RANGE exactly iff the ray hit nothing; hit_index is the
    obstacle's position in the scene (-1 for no hit), hit_ids the matching ids.
    """

    distances: np.ndarray  # (360,), float
    hit_index: np.ndarray  # (360,), int, -1 = none
    hit_ids: np.ndarray  # (360,), object, obstacle id or None


@dataclass(frozen=True)
class PooledScan:
    """15 sector minima of a scan and the argmin ray per sector."""

    distances: np.ndarray  # (15,)
    contributing_ray: np.ndarray  # (15,), raw ray index of the sector argmin


@dataclass(frozen=True)
class Action:
    v: float  # linear velocity, m/s
    omega: float  # angular velocity, rad/s

    def clamped(self, v_max: float = V_MAX, omega_max: float = OMEGA_MAX) -> "Action":
        return Action(
            v=min(max(self.v, 0.0), v_max),
            omega=min(max(self.omega, -omega_max), omega_max),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])


# ---------------------------------------------------------------------------
# ray casting


def _ray_hits_rect(rect: Rect, ox: float, oy: float, dx, dy):
    """Slab test; returns (t, hit) arrays broadcast over the direction arrays."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_x = 1.0 / np.asarray(dx, dtype=float)
        inv_y = 1.0 / np.asarray(dy, dtype=float)
        tx1 = (rect.cx - rect.hx - ox) * inv_x
        tx2 = (rect.cx + rect.hx - ox) * inv_x
        ty1 = (rect.cy - rect.hy - oy) * inv_y
        ty2 = (rect.cy + rect.hy - oy) * inv_y
    # fmin/fmax drop the NaN arising from 0 * inf (origin exactly on a slab plane)
    tnear = np.fmax(np.fmin(tx1, tx2), np.fmin(ty1, ty2))
    tfar = np.fmin(np.fmax(tx1, tx2), np.fmax(ty1, ty2))
    hit = (tnear <= tfar) & (tfar >= 0.0)
    t = np.where(tnear > 0.0, tnear, 0.0)  # origin inside -> distance 0
    return t, hit


def _ray_hits_circle(circle: Circle, ox: float, oy: float, dx, dy):
    fx = ox - circle.cx
    fy = oy - circle.cy
    b = fx * np.asarray(dx, dtype=float) + fy * np.asarray(dy, dtype=float)
    c = fx * fx + fy * fy - circle.r * circle.r
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
    t_in = -b - sq
    t_out = -b + sq
    hit = (disc >= 0.0) & (t_out >= 0.0)
    t = np.where(t_in > 0.0, t_in, 0.0)
    return t, hit


def _shape_hits(shape: Shape, ox: float, oy: float, dx, dy):
    if isinstance(shape, Rect):
        return _ray_hits_rect(shape, ox, oy, dx, dy)
    return _ray_hits_circle(shape, ox, oy, dx, dy)


def raycast(
    scene: Scene, origin: tuple[float, float], direction: tuple[float, float]
) -> tuple[float, str | None]:
    """Nearest intersection of a single ray with the scene, capped at MAX_RANGE.

    direction must be unit-length. Returns (MAX_RANGE, None) when nothing is
    hit strictly inside the detection range.
    """
    dx, dy = float(direction[0]), float(direction[1])
    if abs(math.hypot(dx, dy) - 1.0) > 1e-9:
        raise ValueError("raycast direction must be unit-length")
    best = MAX_RANGE
    best_id: str | None = None
    for ob in scene.obstacles:
        t, hit = _shape_hits(ob.shape, float(origin[0]), float(origin[1]), dx, dy)
        if bool(hit) and float(t) < best:
            best = float(t)
            best_id = ob.id
    return best, best_id


def scan(scene: Scene, pose: Pose) -> LidarScan:
    """Cast all 360 rays counterclockwise from the robot heading."""
    angles = pose.heading + (2.0 * math.pi / N_RAYS) * np.arange(N_RAYS)
    dx = np.cos(angles)
    dy = np.sin(angles)
    best = np.full(N_RAYS, MAX_RANGE)
    best_idx = np.full(N_RAYS, -1, dtype=np.int64)
    for idx, ob in enumerate(scene.obstacles):
        t, hit = _shape_hits(ob.shape, pose.x, pose.y, dx, dy)
        closer = hit & (t < best)
        best = np.where(closer, t, best)
        best_idx = np.where(closer, idx, best_idx)
    return LidarScan(distances=best, hit_index=best_idx, hit_ids=scene._id_lut[best_idx])


def pool(lidar: LidarScan) -> PooledScan:
    """Min-pool 360 rays into 15 sectors of 24 consecutive rays.

    Ties inside a sector resolve to the lowest ray index, which keeps the
    attribution ray-to-object mapping deterministic.
    """
    if lidar.distances.shape != (N_RAYS,):
        raise ValueError(f"expected {N_RAYS} rays")
    sectors = lidar.distances.reshape(N_SECTORS, RAYS_PER_SECTOR)
    arg = sectors.argmin(axis=1)
    rows = np.arange(N_SECTORS)
    return PooledScan(
        distances=sectors[rows, arg],
        contributing_ray=arg + rows * RAYS_PER_SECTOR,
    )


# ---------------------------------------------------------------------------
# robot-frame goal and state assembly


def goal_polar(pose: Pose, goal: tuple[float, float]) -> tuple[float, float]:
    """Goal position in the robot frame as (distance, bearing in [-pi, pi))."""
    gx = goal[0] - pose.x
    gy = goal[1] - pose.y
    r = math.hypot(gx, gy)
    if r == 0.0:
        return 0.0, 0.0  # degenerate polar angle pinned to 0
    theta = wrap_angle(math.atan2(gy, gx) - pose.heading)
    return r, theta


def build_state(scene: Scene, pose: Pose) -> tuple[np.ndarray, PooledScan, LidarScan]:
    """Assemble the 17-entry policy input: 15 normalized sector minima + polar goal.

    Returns the intermediate scans as well so attribution can map pooled
    entries back to the obstacle each contributing ray hit.
    """
    full = scan(scene, pose)
    pooled = pool(full)
    r, theta = goal_polar(pose, scene.goal)
    state = np.empty(STATE_DIM)
    state[LIDAR_SLICE] = pooled.distances / MAX_RANGE
    state[N_SECTORS] = r / GOAL_RANGE_NORM
    state[N_SECTORS + 1] = theta / math.pi
    return state, pooled, full


# ---------------------------------------------------------------------------
# kinematics and clearance


def surface_distance(shape: Shape, px: float, py: float) -> float:
    """Distance from a point to the shape surface; 0 when inside."""
    if isinstance(shape, Rect):
        ex = abs(px - shape.cx) - shape.hx
        ey = abs(py - shape.cy) - shape.hy
        return math.hypot(max(ex, 0.0), max(ey, 0.0))
    return max(math.hypot(px - shape.cx, py - shape.cy) - shape.r, 0.0)


def min_obstacle_distance(scene: Scene, px: float, py: float) -> float:
    """Distance from a point to the nearest obstacle surface (inf if none)."""
    if not scene.obstacles:
        return math.inf
    return min(surface_distance(ob.shape, px, py) for ob in scene.obstacles)


def collides(scene: Scene, px: float, py: float, radius: float = ROBOT_RADIUS) -> bool:
    """Robot disc intersects an obstacle or is not fully inside the bounds."""
    if not scene.bounds.contains(px, py, margin=radius):
        return True
    return min_obstacle_distance(scene, px, py) <= radius


def step_pose(pose: Pose, action: Action, dt: float = DT) -> Pose:
    """Unicycle integration: rotate first, then translate along the new heading."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    a = action.clamped()
    heading = wrap_angle(pose.heading + a.omega * dt)
    return Pose(
        x=pose.x + a.v * dt * math.cos(heading),
        y=pose.y + a.v * dt * math.sin(heading),
        heading=heading,
    )


class Outcome(enum.Enum):
    NONE = "none"
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        return self is not Outcome.NONE


@dataclass
class StepResult:
    state: np.ndarray
    pose: Pose
    outcome: Outcome
    d_min: float  # clearance to nearest obstacle at the new pose


class Episode:
    """Bookkeeping for one rollout: pose, tick count and terminal detection.

    Exactly one of goal/collision/timeout terminates an episode; the goal
    check wins when several would fire on the same tick.
    """

    def __init__(
        self,
        scene: Scene,
        *,
        max_steps: int = 300,
        goal_radius: float = GOAL_RADIUS,
        dt: float = DT,
    ) -> None:
        self.scene = scene
        self.max_steps = max_steps
        self.goal_radius = goal_radius
        self.dt = dt
        self.pose = scene.start
        self.steps = 0
        self.outcome = Outcome.NONE

    def reset(self) -> np.ndarray:
        self.pose = self.scene.start
        self.steps = 0
        self.outcome = Outcome.NONE
        state, _, _ = build_state(self.scene, self.pose)
        return state

    def step(self, action: Action) -> StepResult:
        if self.outcome.terminal:
            raise RuntimeError("episode already terminated")
        self.pose = step_pose(self.pose, action, self.dt)
        self.steps += 1
        gx, gy = self.scene.goal
        if math.hypot(self.pose.x - gx, self.pose.y - gy) <= self.goal_radius:
            self.outcome = Outcome.GOAL
        elif collides(self.scene, self.pose.x, self.pose.y):
            self.outcome = Outcome.COLLISION
        elif self.steps >= self.max_steps:
            self.outcome = Outcome.TIMEOUT
        state, _, _ = build_state(self.scene, self.pose)
        return StepResult(
            state=state,
            pose=self.pose,
            outcome=self.outcome,
            d_min=min_obstacle_distance(self.scene, self.pose.x, self.pose.y),
        )


# ---------------------------------------------------------------------------
# scene serialization (versioned JSON)


def _shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, Rect):
        return {
            "shape": "rect",
            "center": [shape.cx, shape.cy],
            "half_extents": [shape.hx, shape.hy],
        }
    return {"shape": "circle", "center": [shape.cx, shape.cy], "radius": shape.r}


def _shape_from_dict(d: dict) -> Shape:
    try:
        kind = d["shape"]
        cx, cy = (float(v) for v in d["center"])
        if kind == "rect":
            hx, hy = (float(v) for v in d["half_extents"])
            return Rect(cx=cx, cy=cy, hx=hx, hy=hy)
        if kind == "circle":
            return Circle(cx=cx, cy=cy, r=float(d["radius"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"bad obstacle shape: {exc}") from exc
    raise SceneFormatError(f"unknown obstacle shape {kind!r}")


def scene_to_dict(scene: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "bounds": [scene.bounds.xmin, scene.bounds.ymin, scene.bounds.xmax, scene.bounds.ymax],
        "obstacles": [{"id": ob.id, **_shape_to_dict(ob.shape)} for ob in scene.obstacles],
        "goal": list(scene.goal),
        "start": {"position": [scene.start.x, scene.start.y], "heading": scene.start.heading},
        "observer": list(scene.observer) if scene.observer is not None else None,
        "seed": scene.seed,
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("format") != SCENE_FORMAT:
        raise SceneFormatError(f"expected format {SCENE_FORMAT!r}, got {d.get('format')!r}")
    try:
        bounds = Bounds(*(float(v) for v in d["bounds"]))
        obstacles = tuple(
            Obstacle(id=str(ob["id"]), shape=_shape_from_dict(ob)) for ob in d["obstacles"]
        )
        start = d["start"]
        scene = Scene(
            obstacles=obstacles,
            goal=(float(d["goal"][0]), float(d["goal"][1])),
            start=Pose(
                x=float(start["position"][0]),
                y=float(start["position"][1]),
                heading=float(start["heading"]),
            ),
            bounds=bounds,
            observer=tuple(float(v) for v in d["observer"]) if d.get("observer") else None,
            seed=d.get("seed"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneFormatError):
            raise
        raise SceneFormatError(f"malformed scene: {exc}") from exc
    scene.validate()
    return scene


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")


def load_scene(path: str | Path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# random scene sampling

ARENA = Bounds(-5.0, -5.0, 5.0, 5.0)


def _sample_shape(rng: np.random.Generator) -> Shape:
    if rng.random() < 0.5:
        return Circle(cx=0.0, cy=0.0, r=float(rng.uniform(0.3, 0.7)))
    return Rect(
        cx=0.0,
        cy=0.0,
        hx=float(rng.uniform(0.3, 0.7)),
        hy=float(rng.uniform(0.3, 0.7)),
    )


def _place(shape: Shape, cx: float, cy: float) -> Shape:
    if isinstance(shape, Rect):
        return Rect(cx=cx, cy=cy, hx=shape.hx, hy=shape.hy)
    return Circle(cx=cx, cy=cy, r=shape.r)


def _shapes_overlap(a: Shape, b: Shape, gap: float) -> bool:
    # conservative circle-vs-circle test on bounding radii keeps scene objects
    # visually distinct for the ranking task
    def radius(s: Shape) -> float:
        return s.r if isinstance(s, Circle) else math.hypot(s.hx, s.hy)

    def center(s: Shape) -> tuple[float, float]:
        return (s.cx, s.cy)

    ax, ay = center(a)
    bx, by = center(b)
    return math.hypot(ax - bx, ay - by) < radius(a) + radius(b) + gap


def random_scene(
    rng: np.random.Generator,
    *,
    n_obstacles: int,
    bounds: Bounds = ARENA,
    min_start_goal: float = 2.0,
    max_start_goal: float = 7.0,
    clearance: float = 0.8,
    face_goal: bool = True,
    observer: bool = False,
    max_tries: int = 200,
) -> Scene:
    """Rejection-sample a scene: spaced obstacles, clear start/goal, start facing the goal.

    Raises RuntimeError when a constraint cannot be met within max_tries draws.
    """

    def fail(what: str) -> RuntimeError:
        return RuntimeError(f"scene sampler failed to place {what} after {max_tries} tries")

    if bounds.xmax - bounds.xmin < 3.0 or bounds.ymax - bounds.ymin < 3.0:
        raise fail("start/goal (bounds too small)")

    start = goal = None
    for _ in range(max_tries):
        sx = float(rng.uniform(bounds.xmin + 1.0, bounds.xmax - 1.0))
        sy = float(rng.uniform(bounds.ymin + 1.0, bounds.ymax - 1.0))
        gx = float(rng.uniform(bounds.xmin + 1.5, bounds.xmax - 1.5))
        gy = float(rng.uniform(bounds.ymin + 1.5, bounds.ymax - 1.5))
        if min_start_goal <= math.hypot(gx - sx, gy - sy) <= max_start_goal:
            start, goal = (sx, sy), (gx, gy)
            break
    if start is None:
        raise fail("start/goal")

    heading = math.atan2(goal[1] - start[1], goal[0] - start[0]) if face_goal else float(
        rng.uniform(-math.pi, math.pi)
    )

    shapes: list[Shape] = []
    for _ in range(n_obstacles):
        placed = None
        for _ in range(max_tries):
            proto = _sample_shape(rng)
            cx = float(rng.uniform(bounds.xmin + 0.8, bounds.xmax - 0.8))
            cy = float(rng.uniform(bounds.ymin + 0.8, bounds.ymax - 0.8))
            cand = _place(proto, cx, cy)
            if surface_distance(cand, start[0], start[1]) < clearance:
                continue
            if surface_distance(cand, goal[0], goal[1]) < clearance:
                continue
            if any(_shapes_overlap(cand, s, gap=0.1) for s in shapes):
                continue
            placed = cand
            break
        if placed is None:
            raise fail("obstacle")
        shapes.append(placed)

    obs_pos = None
    if observer:
        obs_pos = (
            float(rng.uniform(bounds.xmin, bounds.xmax)),
            float(rng.uniform(bounds.ymin, bounds.ymax)),
        )

    scene = Scene(
        obstacles=tuple(Obstacle(id=f"ob{i}", shape=s) for i, s in enumerate(shapes)),
        goal=goal,
        start=Pose(x=start[0], y=start[1], heading=heading),
        bounds=bounds,
        observer=obs_pos,
        seed=None,
    )
    scene.validate()
    return scene
