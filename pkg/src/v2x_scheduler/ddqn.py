"""Fully connected Q-network in numpy, experience replay and the training loop.

The network is ``state -> hidden (ReLU) ... -> N`` with a linear output. Gradients are
computed by explicit backpropagation of the summed squared TD error and applied with
momentum gradient descent. The target network is a byte copy of the online one,
refreshed every ``target_sync_every`` episodes.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from v2x_scheduler.context import TrainConfig
from v2x_scheduler.state import Transition
from v2x_scheduler.utils import write_csv

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"V2XQNET\0"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIQI")

CURVE_HEADER = ("episode", "mean_validation_return")


class CheckpointSchemaError(ValueError):
    """Raised when a checkpoint does not match the expected layout."""


class Environment(Protocol):
    """What the training loop needs from an environment."""

    n_actions: int
    state_dim: int

    def reset(self) -> Any:
        """Start an episode and return the first observation."""
        ...

    def step(self, action: int) -> Tuple[Any, float, bool, Any]:
        """Apply ``action`` and return ``(observation, reward, done, info)``."""
        ...


@dataclass
class QNetworkParams:
    """Layer dimensions plus weights shaped ``(out, in)`` and biases shaped ``(out,)``."""

    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self) -> None:
        """Check that the arrays match the declared dimensions."""
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        expected = list(zip(self.layer_dims[1:], self.layer_dims[:-1]))
        if [w.shape for w in self.weights] != expected:
            raise ValueError(f"weight shapes {[w.shape for w in self.weights]} do not match {expected}")
        if [b.shape for b in self.biases] != [(o,) for o, _ in expected]:
            raise ValueError("bias shapes do not match the layer dims")

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> "QNetworkParams":
        """He-uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))`` and zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_dims), weights, biases)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> "QNetworkParams":
        """All-zero parameters."""
        pairs = list(zip(layer_dims[:-1], layer_dims[1:]))
        return cls(tuple(layer_dims), [np.zeros((o, i)) for i, o in pairs], [np.zeros(o) for _, o in pairs])

    def copy(self) -> "QNetworkParams":
        """Deep copy."""
        return QNetworkParams(self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def n_actions(self) -> int:
        """Output width."""
        return self.layer_dims[-1]

    def arrays(self) -> List[np.ndarray]:
        """Weights and biases interleaved in declaration order."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def _activations(params: QNetworkParams, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Return the inputs of every layer and the pre-activations."""
    inputs, pre = [x], []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        inputs.append(a)
    return inputs, pre


def forward(params: QNetworkParams, state: Any) -> np.ndarray:
    """Return Q-values for one state ``(d,)`` or a batch ``(B, d)``.

    Raises:
        ValueError: The state width does not match the input layer.
    """
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1:] != (params.layer_dims[0],):
        raise ValueError(f"state has shape {x.shape}, network expects width {params.layer_dims[0]}")
    inputs, _ = _activations(params, np.atleast_2d(x))
    q = inputs[-1]
    return q[0] if x.ndim == 1 else q


def act(params: QNetworkParams, state: Any, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action; the greedy choice breaks ties toward the lowest index.

    One uniform draw decides exploration on every call; a second draw picks the random
    action only when exploring.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(params.n_actions))
    return int(np.argmax(forward(params, state)))


@dataclass(frozen=True)
class TransitionBatch:
    """Stacked transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        """Number of transitions."""
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        """Stack a list of transitions."""
        return cls(
            states=np.stack([np.asarray(t.state, dtype=np.float64) for t in transitions]),
            actions=np.array([t.action for t in transitions], dtype=np.int64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.stack([np.asarray(t.next_state, dtype=np.float64) for t in transitions]),
            dones=np.array([t.done for t in transitions], dtype=bool),
        )


def td_targets(
    batch: TransitionBatch,
    theta: QNetworkParams,
    theta_minus: QNetworkParams,
    gamma: float,
    rule: str = "double_q",
) -> np.ndarray:
    """Return bootstrap targets ``y``; terminal transitions give ``y = r``.

    ``vanilla`` bootstraps from ``max_a' Q(s', a'; theta_minus)``. ``double_q`` picks
    ``a'`` with the online network and evaluates it under ``theta_minus``.
    """
    if len(batch) == 0:
        raise ValueError("batch is empty")
    q_next = forward(theta_minus, batch.next_states)
    if rule == "vanilla":
        bootstrap = q_next.max(axis=1)
    elif rule == "double_q":
        chosen = np.argmax(forward(theta, batch.next_states), axis=1)
        bootstrap = q_next[np.arange(len(batch)), chosen]
    else:
        raise ValueError(f"unknown target rule {rule!r}")
    return batch.rewards + gamma * np.where(batch.dones, 0.0, bootstrap)


def loss_and_gradients(
    params: QNetworkParams, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Return ``sum (y - Q(s, a))^2`` and its gradients by backpropagation."""
    inputs, pre = _activations(params, np.asarray(states, dtype=np.float64))
    rows = np.arange(len(actions))
    err = targets - inputs[-1][rows, actions]
    loss = float(np.sum(err**2))

    grad = np.zeros_like(inputs[-1])
    grad[rows, actions] = -2.0 * err
    grads_w: List[np.ndarray] = [np.empty(0)] * len(params.weights)
    grads_b: List[np.ndarray] = [np.empty(0)] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = grad.T @ inputs[i]
        grads_b[i] = grad.sum(axis=0)
        if i:
            grad = (grad @ params.weights[i]) * (pre[i - 1] > 0)
    return loss, grads_w, grads_b


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity: int) -> None:
        """Create an empty buffer holding at most ``capacity`` transitions."""
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.cursor = 0
        self._items: List[Transition] = []

    def __len__(self) -> int:
        """Number of stored transitions."""
        return len(self._items)

    def push(self, transition: Transition) -> None:
        """Store a transition, overwriting the oldest once full."""
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self.cursor] = transition
        self.cursor = (self.cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Draw ``min(batch_size, len)`` distinct transitions uniformly."""
        if not self._items:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.choice(len(self._items), size=min(batch_size, len(self._items)), replace=False)
        return TransitionBatch.from_transitions([self._items[i] for i in idx])


class DDQNAgent:
    """Online and target networks with the momentum optimizer state."""

    def __init__(
        self,
        online: QNetworkParams,
        cfg: Optional[TrainConfig] = None,
        seed: int = 0,
        target: Optional[QNetworkParams] = None,
    ) -> None:
        """Wrap ``online`` params; the target starts as a copy unless given."""
        self.cfg = cfg or TrainConfig()
        self.seed = seed
        self.online = online
        self.target = target.copy() if target is not None else online.copy()
        self.rng = np.random.default_rng(seed)
        self._velocity_w = [np.zeros_like(w) for w in online.weights]
        self._velocity_b = [np.zeros_like(b) for b in online.biases]

    @classmethod
    def create(cls, state_dim: int, n_actions: int, cfg: Optional[TrainConfig] = None, seed: int = 0) -> "DDQNAgent":
        """Build a freshly initialized agent."""
        cfg = cfg or TrainConfig()
        dims = (state_dim, *cfg.hidden_dims, n_actions)
        init_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        return cls(QNetworkParams.initialize(dims, init_rng), cfg=cfg, seed=seed)

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        """Network layout."""
        return self.online.layer_dims

    def q_values(self, state: Any) -> np.ndarray:
        """Q-values of the online network."""
        return forward(self.online, state)

    def act(self, state: Any, epsilon: float) -> int:
        """Epsilon-greedy action on the agent's own random stream."""
        return act(self.online, state, epsilon, self.rng)

    def greedy(self, state: Any) -> int:
        """Greedy action, no randomness consumed."""
        return int(np.argmax(self.q_values(state)))

    def train_step(self, batch: TransitionBatch) -> float:
        """Apply one momentum gradient step and return the pre-update loss."""
        targets = td_targets(batch, self.online, self.target, self.cfg.gamma, self.cfg.target_rule)
        loss, grads_w, grads_b = loss_and_gradients(self.online, batch.states, batch.actions, targets)
        if self.cfg.max_grad_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g**2)) for g in (*grads_w, *grads_b)))
            if norm > self.cfg.max_grad_norm:
                scale = self.cfg.max_grad_norm / norm
                grads_w = [g * scale for g in grads_w]
                grads_b = [g * scale for g in grads_b]
        lr, mom = self.cfg.learning_rate, self.cfg.momentum
        for i in range(len(grads_w)):
            self._velocity_w[i] = mom * self._velocity_w[i] + grads_w[i]
            self._velocity_b[i] = mom * self._velocity_b[i] + grads_b[i]
            self.online.weights[i] -= lr * self._velocity_w[i]
            self.online.biases[i] -= lr * self._velocity_b[i]
        return loss

    def sync_target(self) -> None:
        """Copy the online parameters into the target network."""
        self.target = self.online.copy()

    def save(self, path: str | Path) -> Path:
        """Write a versioned little-endian checkpoint."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        dims = self.layer_dims
        with path.open("wb") as fh:
            fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, self.seed & 0xFFFFFFFFFFFFFFFF, len(dims)))
            fh.write(np.asarray(dims, dtype="<u4").tobytes())
            for net in (self.online, self.target):
                for arr in net.arrays():
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))
        return path

    @classmethod
    def load(
        cls,
        path: str | Path,
        cfg: Optional[TrainConfig] = None,
        expected_dims: Optional[Sequence[int]] = None,
    ) -> "DDQNAgent":
        """Read a checkpoint written by :meth:`save`.

        Raises:
            CheckpointSchemaError: Bad magic, unknown version, truncated data or layer
                dims different from ``expected_dims``.
        """
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise CheckpointSchemaError(f"{path}: file too short for a checkpoint header")
        magic, version, seed, n_dims = _HEADER.unpack_from(data, 0)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointSchemaError(f"{path}: not a Q-network checkpoint")
        if version != CHECKPOINT_VERSION:
            raise CheckpointSchemaError(f"{path}: unsupported checkpoint version {version}")
        offset = _HEADER.size
        if len(data) < offset + 4 * n_dims:
            raise CheckpointSchemaError(f"{path}: truncated layer dims")
        dims = tuple(int(d) for d in np.frombuffer(data, dtype="<u4", count=n_dims, offset=offset))
        offset += 4 * n_dims
        if n_dims < 2 or min(dims) < 1:
            raise CheckpointSchemaError(f"{path}: invalid layer dims {dims}")
        if expected_dims is not None and tuple(expected_dims) != dims:
            raise CheckpointSchemaError(f"{path}: layer dims {dims} do not match expected {tuple(expected_dims)}")

        nets = []
        for _ in range(2):
            weights, biases = [], []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                for shape in ((fan_out, fan_in), (fan_out,)):
                    count = int(np.prod(shape))
                    if len(data) < offset + 8 * count:
                        raise CheckpointSchemaError(f"{path}: truncated parameter data")
                    arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
                    offset += 8 * count
                    (weights if len(shape) == 2 else biases).append(arr.astype(np.float64))
            nets.append(QNetworkParams(dims, weights, biases))
        if offset != len(data):
            raise CheckpointSchemaError(f"{path}: {len(data) - offset} trailing bytes")
        return cls(nets[0], cfg=cfg, seed=int(seed), target=nets[1])


def epsilon_at(episode: int, cfg: TrainConfig) -> float:
    """Linear decay from ``epsilon_start`` to ``epsilon_end``, flat afterwards."""
    if cfg.epsilon_decay_episodes == 0 or episode >= cfg.epsilon_decay_episodes:
        return cfg.epsilon_end
    frac = max(episode, 0) / cfg.epsilon_decay_episodes
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def evaluate_greedy(agent: DDQNAgent, envs: Sequence[Environment]) -> float:
    """Mean undiscounted return of the greedy policy over ``envs``."""
    returns = []
    for env in envs:
        state, done, total = env.reset(), False, 0.0
        while not done:
            state, reward, done, _ = env.step(agent.greedy(state))
            total += reward
        returns.append(total)
    return float(np.mean(returns)) if returns else 0.0


@dataclass
class TrainResult:
    """Trained agent plus the learning curves."""

    agent: DDQNAgent
    curve: List[Tuple[int, float]] = field(default_factory=list)
    episode_returns: List[float] = field(default_factory=list)

    def write_curve(self, path: str | Path) -> Path:
        """Write the validation curve as CSV."""
        return write_csv(path, CURVE_HEADER, self.curve)


def train(
    env_factory: Callable[[int], Environment],
    cfg: TrainConfig,
    episodes: Optional[int] = None,
    validation_factory: Optional[Callable[[int], Environment]] = None,
    agent: Optional[DDQNAgent] = None,
    seed: int = 0,
) -> TrainResult:
    """Run the training loop.

    Every episode is rolled out epsilon-greedily with its transitions stored in replay;
    one mini-batch update follows each episode, the target network is refreshed every
    ``target_sync_every`` episodes and, when ``validation_factory`` is given, the greedy
    return over ``validation_frames`` environments is recorded every
    ``validate_every`` episodes.

    Args:
        env_factory: Maps an episode index to an environment ready for ``reset()``.
        cfg: Learner hyperparameters.
        episodes: Episode count; defaults to ``cfg.episodes``.
        validation_factory: Maps a validation index to a fixed environment.
        agent: Agent to continue training; a new one is built otherwise.
        seed: Learner seed used when ``cfg.seed`` is unset.
    """
    n_episodes = cfg.episodes if episodes is None else episodes
    if n_episodes is None:
        raise ValueError("number of training episodes is not set")
    learner_seed = cfg.seed if cfg.seed is not None else seed
    if agent is None:
        first = env_factory(0)
        agent = DDQNAgent.create(first.state_dim, first.n_actions, cfg, learner_seed)
    replay = ReplayBuffer(cfg.replay_capacity)
    validation = (
        [validation_factory(i) for i in range(cfg.validation_frames)] if validation_factory else []
    )
    result = TrainResult(agent=agent)

    for episode in range(n_episodes):
        env = env_factory(episode)
        epsilon = epsilon_at(episode, cfg)
        state, done, total = env.reset(), False, 0.0
        while not done:
            action = agent.act(state, epsilon)
            next_state, reward, done, _ = env.step(action)
            replay.push(Transition(np.asarray(state), action, float(reward), np.asarray(next_state), bool(done)))
            state = next_state
            total += reward
        result.episode_returns.append(total)
        agent.train_step(replay.sample(cfg.batch_size, agent.rng))
        if (episode + 1) % cfg.target_sync_every == 0:
            agent.sync_target()
        if validation and (episode + 1) % cfg.validate_every == 0:
            value = evaluate_greedy(agent, validation)
            result.curve.append((episode + 1, value))
            logger.info("episode %d epsilon %.3f validation return %.4f", episode + 1, epsilon, value)
    return result
