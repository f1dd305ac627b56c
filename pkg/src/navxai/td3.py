"""TD3 training for the navigation policy.

Twin critics, target networks with soft updates, delayed policy updates and
target policy smoothing, all on the hand-written networks from mlp.py. The
whole loop is driven by one seeded generator, so a config seed pins policy
init, scene sampling, exploration noise and batch selection at once.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .mlp import CriticNetwork, PolicyNetwork
from .world import (
    OMEGA_MAX,
    STATE_DIM,
    V_MAX,
    Action,
    Episode,
    Outcome,
    Scene,
    random_scene,
)

ACTION_LOW = np.array([0.0, -OMEGA_MAX])
ACTION_HIGH = np.array([V_MAX, OMEGA_MAX])
ACTION_HALF_RANGE = (ACTION_HIGH - ACTION_LOW) / 2.0  # noise scales per dimension

TRAIN_CONFIG_FORMAT = "navxai-train-config/1"


# ---------------------------------------------------------------------------
# reward


@dataclass(frozen=True)
class RewardConfig:
    """Per-step reward constants; penalties carry their sign."""

    goal_reward: float = 20.0
    collision_penalty: float = -20.0
    timeout_penalty: float = -1.0
    jerk_coeff: float = 1e-7
    time_penalty: float = -0.001
    proximity_penalty: float = -0.001
    proximity_threshold: float = 0.4  # m
    j_max: float = 1.0  # jerk normalizer
    f_hz: float = 10.0  # control frequency

    def __post_init__(self) -> None:
        if self.proximity_threshold <= 0.0 or self.j_max <= 0.0 or self.f_hz <= 0.0:
            raise ValueError("reward thresholds must be positive")


def reward_terms(
    prev_actions: tuple[np.ndarray, np.ndarray],
    a_t: np.ndarray,
    outcome: Outcome,
    d_min: float,
    config: RewardConfig = RewardConfig(),
) -> dict[str, float]:
    """Named reward contributions; their sum is the step reward."""
    if d_min < 0.0:
        raise ValueError("d_min must be non-negative")
    a1, a2 = (np.asarray(a, dtype=float) for a in prev_actions)
    a_t = np.asarray(a_t, dtype=float)
    jerk = (a_t - 2.0 * a1 + a2) * config.f_hz**2
    if outcome is Outcome.GOAL:
        terminal = config.goal_reward
    elif outcome is Outcome.COLLISION:
        terminal = config.collision_penalty
    elif outcome is Outcome.TIMEOUT:
        terminal = config.timeout_penalty
    else:
        terminal = 0.0
    return {
        "time": config.time_penalty,
        "jerk": -config.jerk_coeff * float(jerk @ jerk) / config.j_max,
        "proximity": config.proximity_penalty if d_min < config.proximity_threshold else 0.0,
        "terminal": terminal,
    }


def reward(
    prev_actions: tuple[np.ndarray, np.ndarray],
    a_t: np.ndarray,
    outcome: Outcome,
    d_min: float,
    config: RewardConfig = RewardConfig(),
) -> float:
    return float(sum(reward_terms(prev_actions, a_t, outcome, d_min, config).values()))


# ---------------------------------------------------------------------------
# replay


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    prev_action: np.ndarray  # a_{t-1}
    prev_prev_action: np.ndarray  # a_{t-2}

    def __post_init__(self) -> None:
        if self.state.shape != (STATE_DIM,) or self.next_state.shape != (STATE_DIM,):
            raise ValueError(f"transition states must have length {STATE_DIM}")


@dataclass(frozen=True)
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    prev_actions: np.ndarray
    prev_prev_actions: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform without-replacement batches."""

    def __init__(self, capacity: int) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._states = np.zeros((capacity, STATE_DIM))
        self._actions = np.zeros((capacity, 2))
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, STATE_DIM))
        self._dones = np.zeros(capacity)
        self._prev1 = np.zeros((capacity, 2))
        self._prev2 = np.zeros((capacity, 2))
        self._size = 0
        self._head = 0  # next write position; oldest entry once full

    def __len__(self) -> int:
        return self._size

    def add(self, tr: Transition) -> None:
        i = self._head
        self._states[i] = tr.state
        self._actions[i] = tr.action
        self._rewards[i] = tr.reward
        self._next_states[i] = tr.next_state
        self._dones[i] = float(tr.done)
        self._prev1[i] = tr.prev_action
        self._prev2[i] = tr.prev_prev_action
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size > self._size:
            raise ValueError(f"cannot draw {batch_size} from buffer of {self._size}")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return Batch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            dones=self._dones[idx],
            prev_actions=self._prev1[idx],
            prev_prev_actions=self._prev2[idx],
        )


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 100_000  # desk-scale default; full-scale 500k via CLI flag
    warmup_steps: int = 10_000  # uniform-random fill; sparse reward needs the coverage
    batch_size: int = 100
    buffer_capacity: int = 100_000
    discount: float = 0.99
    target_update_rate: float = 5e-3
    policy_delay: int = 2
    exploration_noise: float = 0.1  # std, in half-range units
    target_noise: float = 0.2
    noise_clip: float = 0.5
    learning_rate: float = 3e-4
    max_episode_steps: int = 300
    min_obstacles: int = 3
    max_obstacles: int = 6
    seed: int = 0
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self) -> None:
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        for name in (
            "warmup_steps",
            "batch_size",
            "buffer_capacity",
            "policy_delay",
            "max_episode_steps",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        if not (0.0 < self.target_update_rate <= 1.0):
            raise ValueError("target_update_rate must be in (0, 1]")
        if self.min_obstacles < 0 or self.max_obstacles < self.min_obstacles:
            raise ValueError("obstacle range must satisfy 0 <= min <= max")

    def to_json(self) -> str:
        d = {"format": TRAIN_CONFIG_FORMAT}
        for f_ in self.__dataclass_fields__:
            v = getattr(self, f_)
            d[f_] = v.__dict__ if isinstance(v, RewardConfig) else v
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        if d.pop("format", TRAIN_CONFIG_FORMAT) != TRAIN_CONFIG_FORMAT:
            raise ValueError(f"expected a {TRAIN_CONFIG_FORMAT} document")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "reward" in d:
            d["reward"] = RewardConfig(**d["reward"])
        return cls(**d)


EnvFactory = Callable[[np.random.Generator], Episode]


def default_env_factory(config: TrainConfig) -> EnvFactory:
    """Random training scenes with a uniform obstacle count, start facing the goal."""

    def make(rng: np.random.Generator) -> Episode:
        n = int(rng.integers(config.min_obstacles, config.max_obstacles + 1))
        scene = random_scene(rng, n_obstacles=n)
        return Episode(scene, max_steps=config.max_episode_steps)

    return make


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class EpisodeStat:
    episode: int
    end_step: int  # global env step at which the episode finished
    steps: int
    outcome: str
    ret: float


@dataclass
class TrainResult:
    policy: PolicyNetwork
    critic1: CriticNetwork
    critic2: CriticNetwork
    episodes: list[EpisodeStat]
    config: TrainConfig
    wall_time_s: float


def write_episode_log(episodes: Sequence[EpisodeStat], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "end_step", "steps", "outcome", "return"])
        for e in episodes:
            w.writerow([e.episode, e.end_step, e.steps, e.outcome, f"{e.ret:.6f}"])


class _Td3State:
    """Online and target networks plus their optimizers."""

    def __init__(self, rng: np.random.Generator, lr: float) -> None:
        self.policy = PolicyNetwork(rng)
        self.critic1 = CriticNetwork(rng)
        self.critic2 = CriticNetwork(rng)
        self.target_policy = self.policy.copy()
        self.target_c1 = self.critic1.copy()
        self.target_c2 = self.critic2.copy()
        self.opt_policy = Adam(self.policy.mlp.weights + self.policy.mlp.biases, lr)
        self.opt_c1 = Adam(self.critic1.mlp.weights + self.critic1.mlp.biases, lr)
        self.opt_c2 = Adam(self.critic2.mlp.weights + self.critic2.mlp.biases, lr)
        self.updates = 0

    def update(self, batch: Batch, config: TrainConfig, rng: np.random.Generator) -> float:
        self.updates += 1
        b = config.batch_size
        # smoothed target actions
        noise = rng.normal(0.0, config.target_noise * ACTION_HALF_RANGE, size=(b, 2))
        clip = config.noise_clip * ACTION_HALF_RANGE
        noise = np.clip(noise, -clip, clip)
        a_next = np.clip(self.target_policy.forward(batch.next_states) + noise, ACTION_LOW, ACTION_HIGH)
        q_next = np.minimum(
            self.target_c1.forward(batch.next_states, a_next),
            self.target_c2.forward(batch.next_states, a_next),
        )
        y = batch.rewards + config.discount * (1.0 - batch.dones) * q_next

        loss = 0.0
        for critic, opt in ((self.critic1, self.opt_c1), (self.critic2, self.opt_c2)):
            q, cache = critic.forward_cached(batch.states, batch.actions)
            diff = q - y
            loss += float(diff @ diff) / b
            gw, gb, _, _ = critic.backward(cache, 2.0 * diff / b)
            opt.step(gw + gb)

        if self.updates % config.policy_delay == 0:
            a_pi, pcache = self.policy.forward_cached(batch.states)
            _, ccache = self.critic1.forward_cached(batch.states, a_pi)
            _, _, _, grad_a = self.critic1.backward(ccache, np.full(b, -1.0 / b))
            gw, gb = self.policy.backward_params(pcache, grad_a)
            self.opt_policy.step(gw + gb)
            tau = config.target_update_rate
            self.target_policy.mlp.polyak_from(self.policy.mlp, tau)
            self.target_c1.mlp.polyak_from(self.critic1.mlp, tau)
            self.target_c2.mlp.polyak_from(self.critic2.mlp, tau)
        return loss


def train(
    config: TrainConfig,
    env_factory: EnvFactory | None = None,
    *,
    log_path: str | Path | None = None,
    progress: Callable[[int, int, float], None] | None = None,
) -> TrainResult:
    """Run seeded TD3; returns the trained actor, critics and per-episode log.

    Raises RuntimeError if the critic loss goes non-finite (divergence guard).
    """
    t0 = time.perf_counter()
    if env_factory is None:
        env_factory = default_env_factory(config)
    rng = np.random.default_rng(config.seed)
    nets = _Td3State(rng, config.learning_rate)
    buffer = ReplayBuffer(config.buffer_capacity)

    env = env_factory(rng)
    state = env.reset()
    prev1 = np.zeros(2)
    prev2 = np.zeros(2)
    episodes: list[EpisodeStat] = []
    ep_return = 0.0
    ep_steps = 0
    last_return = 0.0

    for step in range(1, config.total_steps + 1):
        if step <= config.warmup_steps:
            a = rng.uniform(ACTION_LOW, ACTION_HIGH)
        else:
            a = nets.policy.forward(state)
            a = a + rng.normal(0.0, config.exploration_noise * ACTION_HALF_RANGE, size=2)
            a = np.clip(a, ACTION_LOW, ACTION_HIGH)
        res = env.step(Action(v=float(a[0]), omega=float(a[1])))
        r = reward((prev1, prev2), a, res.outcome, res.d_min, config.reward)
        # timeouts are a horizon artifact, not an absorbing state: bootstrap through them
        absorbing = res.outcome in (Outcome.GOAL, Outcome.COLLISION)
        buffer.add(Transition(state, a, r, res.state, absorbing, prev1, prev2))
        ep_return += r
        ep_steps += 1

        if res.outcome.terminal:
            episodes.append(
                EpisodeStat(
                    episode=len(episodes),
                    end_step=step,
                    steps=ep_steps,
                    outcome=res.outcome.value,
                    ret=ep_return,
                )
            )
            last_return = ep_return
            env = env_factory(rng)
            state = env.reset()
            prev1 = np.zeros(2)
            prev2 = np.zeros(2)
            ep_return = 0.0
            ep_steps = 0
        else:
            state = res.state
            prev2 = prev1
            prev1 = a

        if step > config.warmup_steps and len(buffer) >= config.batch_size:
            loss = nets.update(buffer.sample(config.batch_size, rng), config, rng)
            if not math.isfinite(loss):
                raise RuntimeError(f"training diverged: non-finite critic loss at step {step}")
        if progress is not None and step % 1000 == 0:
            progress(step, len(episodes), last_return)

    if log_path is not None:
        write_episode_log(episodes, log_path)
    return TrainResult(
        policy=nets.policy,
        critic1=nets.critic1,
        critic2=nets.critic2,
        episodes=episodes,
        config=config,
        wall_time_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalEpisode:
    scene_index: int
    outcome: str
    steps: int
    ret: float


@dataclass(frozen=True)
class EvalResult:
    episodes: tuple[EvalEpisode, ...]
    goal_rate: float
    collision_rate: float
    timeout_rate: float
    mean_return: float
    mean_goal_steps: float  # nan when no episode reached the goal


def evaluate_policy(
    policy,
    scenes: Sequence[Scene],
    *,
    max_steps: int = 300,
    reward_config: RewardConfig = RewardConfig(),
) -> EvalResult:
    """Deterministic rollouts (no exploration noise) with a per-scene breakdown.

    policy needs only an act(state) -> Action method.
    """
    if not scenes:
        raise ValueError("need at least one scene")
    records = []
    for i, scene in enumerate(scenes):
        ep = Episode(scene, max_steps=max_steps)
        state = ep.reset()
        prev1 = np.zeros(2)
        prev2 = np.zeros(2)
        ret = 0.0
        while True:
            act = policy.act(state)
            a = act.as_array()
            res = ep.step(act)
            ret += reward((prev1, prev2), a, res.outcome, res.d_min, reward_config)
            if res.outcome.terminal:
                records.append(EvalEpisode(i, res.outcome.value, ep.steps, ret))
                break
            state = res.state
            prev2 = prev1
            prev1 = a
    n = len(records)
    counts = {o.value: 0 for o in (Outcome.GOAL, Outcome.COLLISION, Outcome.TIMEOUT)}
    for rec in records:
        counts[rec.outcome] += 1
    goal_steps = [rec.steps for rec in records if rec.outcome == Outcome.GOAL.value]
    return EvalResult(
        episodes=tuple(records),
        goal_rate=counts["goal"] / n,
        collision_rate=counts["collision"] / n,
        timeout_rate=counts["timeout"] / n,
        mean_return=float(np.mean([rec.ret for rec in records])),
        mean_goal_steps=float(np.mean(goal_steps)) if goal_steps else math.nan,
    )


def sample_eval_scenes(seed: int, n: int, *, n_obstacles: int = 5) -> list[Scene]:
    """Held-out evaluation scenes from their own seed stream."""
    rng = np.random.default_rng(seed)
    return [random_scene(rng, n_obstacles=n_obstacles) for _ in range(n)]
