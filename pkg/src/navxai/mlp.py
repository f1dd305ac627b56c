"""From-scratch multilayer perceptrons with exact gradients.

Dense ReLU networks in float64 numpy: forward pass, parameter gradients and
input gradients all come from hand-written backpropagation, so the
attribution math downstream depends on nothing but this file. The ReLU
derivative at exactly zero is taken as 0.

Actor head: v = v_max * (tanh(z0) + 1) / 2, omega = omega_max * tanh(z1),
so raw network outputs squash into the actuator ranges smoothly and the
squashed outputs stay differentiable everywhere.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .world import OMEGA_MAX, STATE_DIM, V_MAX, Action

ACTOR_LAYERS = (STATE_DIM, 256, 128, 64, 2)
CRITIC_LAYERS = (STATE_DIM + 2, 256, 128, 64, 1)
FINAL_LAYER_SCALE = 1e-2  # shrinks initial actor outputs toward the squash midpoint

POLICY_FORMAT = "navxai-policy/1"


class CheckpointFormatError(ValueError):
    """Raised when a policy checkpoint is missing, malformed or mismatched."""


class Mlp:
    """Plain dense network: linear layers with ReLU on all but the last."""

    def __init__(
        self,
        sizes,
        rng: np.random.Generator | None = None,
        *,
        final_scale: float = 1.0,
    ) -> None:
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        if rng is None:
            rng = np.random.default_rng()
        self.sizes = sizes
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            if i == last:
                w *= final_scale
                b *= final_scale
            self.weights.append(w)
            self.biases.append(b)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping per-layer inputs and pre-activations for backward."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {a.shape[1]}")
        inputs = []  # what each layer saw
        pre = []  # each layer's pre-activation
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w.T + b
            pre.append(z)
            a = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
        y = a[0] if single else a
        return y, (inputs, pre, single)

    def backward(self, cache, grad_out: np.ndarray):
        """Backpropagate dLoss/d(output) into parameter and input gradients.

        Returns (grad_weights, grad_biases, grad_input); batch parameter
        gradients are summed over the batch.
        """
        inputs, pre, single = cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        grads_w = [np.empty(0)] * self.n_layers
        grads_b = [np.empty(0)] * self.n_layers
        for i in reversed(range(self.n_layers)):
            gz = g if i == self.n_layers - 1 else g * (pre[i] > 0.0)
            grads_w[i] = gz.T @ inputs[i]
            grads_b[i] = gz.sum(axis=0)
            g = gz @ self.weights[i]
        return grads_w, grads_b, (g[0] if single else g)

    def input_gradient(self, x: np.ndarray, index: int = 0) -> np.ndarray:
        """Exact gradient of one raw output component with respect to the input."""
        _, cache = self.forward_cached(np.asarray(x, dtype=float))
        onehot = np.zeros(self.sizes[-1])
        onehot[index] = 1.0
        _, _, gx = self.backward(cache, onehot)
        return gx

    def copy(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.sizes = self.sizes
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def polyak_from(self, online: "Mlp", tau: float) -> None:
        """In-place soft update: self <- (1 - tau) * self + tau * online."""
        for tw, ow in zip(self.weights, online.weights):
            tw *= 1.0 - tau
            tw += tau * ow
        for tb, ob in zip(self.biases, online.biases):
            tb *= 1.0 - tau
            tb += tau * ob


# ---------------------------------------------------------------------------
# actor


def squash_actions(z: np.ndarray) -> np.ndarray:
    """Map raw actor outputs into actuator ranges: v in [0, v_max], omega in +-omega_max."""
    t = np.tanh(np.asarray(z, dtype=float))
    out = np.empty_like(t)
    out[..., 0] = 0.5 * V_MAX * (t[..., 0] + 1.0)
    out[..., 1] = OMEGA_MAX * t[..., 1]
    return out


def _squash_derivative(t: np.ndarray) -> np.ndarray:
    """d(squashed)/dz elementwise, given t = tanh(z)."""
    d = 1.0 - t * t
    out = np.empty_like(d)
    out[..., 0] = 0.5 * V_MAX * d[..., 0]
    out[..., 1] = OMEGA_MAX * d[..., 1]
    return out


class PolicyNetwork:
    """Deterministic actor: 17 state entries to squashed (v, omega)."""

    def __init__(
        self,
        rng: np.random.Generator | None = None,
        *,
        mlp: Mlp | None = None,
    ) -> None:
        if mlp is None:
            mlp = Mlp(ACTOR_LAYERS, rng, final_scale=FINAL_LAYER_SCALE)
        if mlp.sizes != ACTOR_LAYERS:
            raise ValueError(f"actor must have layers {ACTOR_LAYERS}, got {mlp.sizes}")
        self.mlp = mlp

    def forward(self, states: np.ndarray) -> np.ndarray:
        """Squashed actions, single (2,) or batch (n, 2)."""
        return squash_actions(self.mlp.forward(states))

    def forward_cached(self, states: np.ndarray):
        z, cache = self.mlp.forward_cached(states)
        t = np.tanh(z)
        out = np.empty_like(t)
        out[..., 0] = 0.5 * V_MAX * (t[..., 0] + 1.0)
        out[..., 1] = OMEGA_MAX * t[..., 1]
        return out, (cache, t)

    def backward_params(self, pcache, grad_action: np.ndarray):
        """Parameter gradients of a loss given dLoss/d(squashed action)."""
        cache, t = pcache
        gz = np.asarray(grad_action, dtype=float) * _squash_derivative(t)
        gw, gb, _ = self.mlp.backward(cache, gz)
        return gw, gb

    def act(self, state: np.ndarray) -> Action:
        a = self.forward(np.asarray(state, dtype=float))
        return Action(v=float(a[0]), omega=float(a[1])).clamped()

    def input_gradient(self, state: np.ndarray, component: int = 0) -> np.ndarray:
        """Exact gradient of one squashed action component with respect to the state.

        The derivative is of the squashed (pre-clamp) output, so it is defined
        and smooth everywhere the underlying ReLU net is.
        """
        if component not in (0, 1):
            raise ValueError("component must be 0 (v) or 1 (omega)")
        state = np.asarray(state, dtype=float)
        if state.shape != (STATE_DIM,):
            raise ValueError(f"expected state shape ({STATE_DIM},)")
        z, cache = self.mlp.forward_cached(state)
        onehot = np.zeros(2)
        onehot[component] = 1.0
        _, _, gx = self.mlp.backward(cache, onehot)
        t = math.tanh(float(z[component]))
        scale = 0.5 * V_MAX * (1.0 - t * t) if component == 0 else OMEGA_MAX * (1.0 - t * t)
        return scale * gx

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork(mlp=self.mlp.copy())


# ---------------------------------------------------------------------------
# critic


class CriticNetwork:
    """Q(s, a) head over the concatenated state and action."""

    def __init__(
        self,
        rng: np.random.Generator | None = None,
        *,
        mlp: Mlp | None = None,
    ) -> None:
        if mlp is None:
            mlp = Mlp(CRITIC_LAYERS, rng)
        if mlp.sizes != CRITIC_LAYERS:
            raise ValueError(f"critic must have layers {CRITIC_LAYERS}, got {mlp.sizes}")
        self.mlp = mlp

    @staticmethod
    def _join(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        return np.concatenate([states, actions], axis=1)

    def forward(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.mlp.forward(self._join(states, actions))[:, 0]

    def forward_cached(self, states: np.ndarray, actions: np.ndarray):
        q, cache = self.mlp.forward_cached(self._join(states, actions))
        return q[:, 0], cache

    def backward(self, cache, grad_q: np.ndarray):
        """Returns (grad_weights, grad_biases, grad_states, grad_actions)."""
        g = np.asarray(grad_q, dtype=float).reshape(-1, 1)
        gw, gb, gx = self.mlp.backward(cache, g)
        return gw, gb, gx[:, :STATE_DIM], gx[:, STATE_DIM:]

    def copy(self) -> "CriticNetwork":
        return CriticNetwork(mlp=self.mlp.copy())


# ---------------------------------------------------------------------------
# checkpoint I/O


def save_policy(policy: PolicyNetwork, path: str | Path, metadata: dict | None = None) -> None:
    """Write the actor to a versioned .npz checkpoint."""
    arrays: dict[str, np.ndarray] = {
        "format": np.array(POLICY_FORMAT),
        "sizes": np.array(policy.mlp.sizes, dtype=np.int64),
    }
    for i, (w, b) in enumerate(zip(policy.mlp.weights, policy.mlp.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    if metadata is not None:
        arrays["metadata"] = np.array(json.dumps(metadata))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_policy(path: str | Path) -> PolicyNetwork:
    """Load and validate a policy checkpoint; raises CheckpointFormatError."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "format" not in data or str(data["format"]) != POLICY_FORMAT:
            raise CheckpointFormatError(f"{path} is not a {POLICY_FORMAT} checkpoint")
        sizes = tuple(int(s) for s in data["sizes"])
        if sizes != ACTOR_LAYERS:
            raise CheckpointFormatError(f"checkpoint layers {sizes} != required {ACTOR_LAYERS}")
        mlp = Mlp.__new__(Mlp)
        mlp.sizes = sizes
        mlp.weights = []
        mlp.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            try:
                w = np.asarray(data[f"w{i}"], dtype=float)
                b = np.asarray(data[f"b{i}"], dtype=float)
            except KeyError as exc:
                raise CheckpointFormatError(f"checkpoint missing layer {i}") from exc
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise CheckpointFormatError(f"layer {i} has shape {w.shape}/{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise CheckpointFormatError(f"layer {i} contains non-finite values")
            mlp.weights.append(w)
            mlp.biases.append(b)
    return PolicyNetwork(mlp=mlp)


def load_policy_metadata(path: str | Path) -> dict | None:
    """Read the optional metadata blob from a checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        if "metadata" not in data:
            return None
        return json.loads(str(data["metadata"]))
