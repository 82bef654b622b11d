"""Deep Q-learning agent: action space, MLP Q estimator, TD updates, replay.

One action changes one control variable by one step (binary controls toggle);
a distinguished no-op action keeps everything unchanged.  The TD target is
semi-gradient and comes from the same network that is being trained (no
separate target network); stability is provided by experience replay over the
entire accumulated history every ``REPLAY_EVERY`` runs plus reward clamping.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .state import StateVector
from .variables import BINARY, DECREASE, INCREASE, NONE, TOGGLE, Profile

log = logging.getLogger(__name__)

REPLAY_EVERY = 200


@dataclass(frozen=True)
class Action:
    """A change request for one control variable; name None means no-op."""

    name: str | None
    direction: str

    def describe(self) -> str:
        if self.name is None:
            return "no-op"
        return f"{self.name} {self.direction}"


@dataclass(frozen=True)
class ActionSpace:
    actions: tuple[Action, ...]

    NOOP = 0  # the distinguished no-op action is always index 0

    @property
    def size(self) -> int:
        return len(self.actions)

    def __getitem__(self, index: int) -> Action:
        return self.actions[index]


def enumerate_actions(profile: Profile) -> ActionSpace:
    """Deterministic action list: no-op first, then per control in profile
    order one toggle (binary) or a decrease/increase pair (stepped)."""
    actions = [Action(None, NONE)]
    for spec in profile.controls:
        if spec.kind == BINARY:
            actions.append(Action(spec.name, TOGGLE))
        else:
            actions.append(Action(spec.name, DECREASE))
            actions.append(Action(spec.name, INCREASE))
    return ActionSpace(tuple(actions))


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64)
        self.next_state = np.asarray(self.next_state, dtype=np.float64)
        if self.state.shape != self.next_state.shape:
            raise ValueError("state and next_state dimensions differ")

    def to_jsonable(self) -> dict:
        return {
            "state": self.state.tolist(),
            "action": self.action,
            "reward": self.reward,
            "next_state": self.next_state.tolist(),
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "Transition":
        return cls(
            state=np.array(d["state"], dtype=np.float64),
            action=int(d["action"]),
            reward=float(d["reward"]),
            next_state=np.array(d["next_state"], dtype=np.float64),
        )


def _features(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.features
    return np.asarray(state, dtype=np.float64)


@dataclass
class QNetwork:
    """MLP action-value estimator: ReLU hidden layers, identity output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    alpha: float = 0.01
    gamma: float = 0.9
    update_bias: bool = True

    @classmethod
    def initialize(
        cls,
        layer_sizes: list[int],
        rng: np.random.Generator,
        alpha: float = 0.01,
        gamma: float = 0.9,
    ) -> "QNetwork":
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(
                np.ascontiguousarray(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            )
            biases.append(np.ascontiguousarray(rng.uniform(-bound, bound, size=fan_out)))
        return cls(weights=weights, biases=biases, alpha=alpha, gamma=gamma)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def to_jsonable(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "update_bias": self.update_bias,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "QNetwork":
        return cls(
            weights=[np.ascontiguousarray(w, dtype=np.float64) for w in d["weights"]],
            biases=[np.ascontiguousarray(b, dtype=np.float64) for b in d["biases"]],
            alpha=float(d["alpha"]),
            gamma=float(d["gamma"]),
            update_bias=bool(d.get("update_bias", True)),
        )


class ReplayBuffer:
    """Append-only, unbounded experience list; insertion order preserved."""

    def __init__(self, transitions: list[Transition] | None = None):
        self.transitions: list[Transition] = list(transitions or [])

    def add(self, t: Transition) -> None:
        self.transitions.append(t)

    def __len__(self) -> int:
        return len(self.transitions)

    def sample(self, k: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform sample of min(k, len) transitions without replacement."""
        k = min(k, len(self.transitions))
        idx = rng.choice(len(self.transitions), size=k, replace=False)
        return [self.transitions[int(i)] for i in idx]


def forward(net: QNetwork, state) -> np.ndarray:
    """Q values for every action in the given state."""
    x = _features(state)
    if x.shape[0] != net.input_dim:
        raise ValueError(
            f"state dimension {x.shape[0]} does not match network input {net.input_dim}"
        )
    return _kernels.active.forward(net.weights, net.biases, x)


def select_action(
    net: QNetwork, state, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy: explore uniformly with probability epsilon, otherwise
    argmax of the Q vector (ties broken by lowest index)."""
    if rng.random() < epsilon:
        return int(rng.integers(net.output_dim))
    return int(np.argmax(forward(net, state)))


def td_target(reward: float, gamma: float, next_q: np.ndarray) -> float:
    """One-step TD target: reward plus discounted best next-state value."""
    return reward + gamma * float(np.max(next_q))


def train_step(net: QNetwork, t: Transition) -> float:
    """One SGD step on 0.5*(td_target - Q(state)[action])^2.

    The target is computed from the same network (no target network) and held
    constant during the step.  A non-finite loss aborts the step with the
    parameters untouched.
    """
    next_q = forward(net, t.next_state)
    target = td_target(t.reward, net.gamma, next_q)
    loss, applied = _kernels.active.train_step(
        net.weights, net.biases, t.state, t.action, target, net.alpha, net.update_bias
    )
    if not applied:
        log.warning("non-finite TD loss %r; train step skipped", loss)
    return float(loss)


def replay(
    net: QNetwork,
    buffer: ReplayBuffer,
    run_index: int,
    batch_size: int,
    rng: np.random.Generator,
    every: int = REPLAY_EVERY,
) -> int:
    """Retrain on a random subset of all experience every ``every`` runs.

    Returns the number of train steps applied (0 when the gate does not fire).
    """
    if run_index % every != 0 or len(buffer) == 0:
        return 0
    batch = buffer.sample(batch_size, rng)
    for t in batch:
        train_step(net, t)
    return len(batch)


def loss_and_grads(net: QNetwork, t: Transition) -> tuple[float, list, list]:
    """TD loss and its analytic parameter gradients (target held constant)."""
    next_q = forward(net, t.next_state)
    target = td_target(t.reward, net.gamma, next_q)
    return _kernels.active.loss_and_grads(
        net.weights, net.biases, t.state, t.action, target
    )


def gradient_check(net: QNetwork, t: Transition, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-finite-difference
    gradients of the train-step loss, over every parameter."""
    next_q = forward(net, t.next_state)
    target = td_target(t.reward, net.gamma, next_q)

    def loss_at() -> float:
        q = _kernels.active.forward(net.weights, net.biases, t.state)
        d = q[t.action] - target
        return 0.5 * float(d) * float(d)

    _, grad_ws, grad_bs = _kernels.active.loss_and_grads(
        net.weights, net.biases, t.state, t.action, target
    )
    params = list(zip(net.weights, grad_ws)) + (
        list(zip(net.biases, grad_bs)) if net.update_bias else []
    )
    worst = 0.0
    for arr, grad in params:
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for j in range(flat.shape[0]):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_at()
            flat[j] = orig - h
            down = loss_at()
            flat[j] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = gflat[j]
            scale = max(abs(numeric), abs(analytic))
            if scale < 1e-12:
                continue
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst


def epsilon_schedule(
    run_index: int,
    start: float = 1.0,
    end: float = 0.05,
    decay_runs: int = 20,
) -> float:
    """Linear decay from ``start`` at run 1 to ``end`` after ``decay_runs``
    runs, constant afterwards."""
    if run_index >= decay_runs + 1:
        return end
    frac = (run_index - 1) / decay_runs
    return start + (end - start) * frac
