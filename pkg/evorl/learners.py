"""Learners: the learnable part of an agent's behavior.

A learned behavior is plain data, a ``QTable`` or the ``MLPParams`` of a Q-network,
that can be merged (offspring inherit the average of their parents'), mutated,
vectorized and serialized. A ``Learner`` wraps a learned behavior with what is
needed to act and learn with it during an agent's life.

Feedback withheld by a rewardless state (``reward is None``) is never learned from:
such transitions leave a learner bitwise unchanged.

>>> import numpy as np
>>> a = QTable(4, 2, {(1, 0): 2.0})
>>> b = QTable(4, 2, {(1, 0): 4.0, (2, 1): 6.0})
>>> merge_learned(a, b).entries
{(1, 0): 3.0, (2, 1): 6.0}
>>> deserialize_learned(serialize_learned(b)) == b
True
"""

import json
import math
import struct
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Tuple, Optional, Union, NamedTuple, Sequence, List

import numpy as np

from evorl.masking import BinGrid, bin_index
from evorl.envs import EnvSpec, Observation
from evorl.util import InvalidArgument, NumericFault, ConfigError

logger = logging.getLogger(__name__)


class Transition(NamedTuple):
    obs: Observation
    action: int
    reward: Optional[float]
    next_obs: Observation
    terminal: bool


# --------------------------------------------------------------------------------------
# Learned behaviors


@dataclass
class QTable:
    """Action values keyed by ``(bin index, action id)``; missing keys are 0.0"""

    total_bins: int
    action_count: int
    entries: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        for (b, a), v in self.entries.items():
            if not (0 <= b < self.total_bins and 0 <= a < self.action_count):
                raise InvalidArgument(f'Q-table key out of range: {(b, a)}')
            if not math.isfinite(v):
                raise InvalidArgument(f'Non-finite Q-value at {(b, a)}: {v}')

    def values(self, b: int) -> List[float]:
        return [self.entries.get((b, a), 0.0) for a in range(self.action_count)]

    def to_vector(self) -> np.ndarray:
        return np.array([self.entries[k] for k in sorted(self.entries)], dtype=float)

    def with_vector(self, vector: np.ndarray) -> 'QTable':
        keys = sorted(self.entries)
        if len(vector) != len(keys):
            raise InvalidArgument(f'Expected {len(keys)} values, got {len(vector)}')
        return QTable(
            self.total_bins,
            self.action_count,
            {k: float(v) for k, v in zip(keys, vector)},
        )

    def copy(self) -> 'QTable':
        return QTable(self.total_bins, self.action_count, dict(self.entries))


@dataclass(eq=False)
class MLPParams:
    """The weights and biases of a fully connected net, as one flat vector.

    Layer ``i`` contributes its ``(sizes[i], sizes[i+1])`` weight matrix (row-major),
    then its bias vector.
    """

    layer_sizes: Tuple[int, ...]
    vector: np.ndarray

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise InvalidArgument(f'Invalid layer sizes: {self.layer_sizes}')
        expected = n_mlp_params(self.layer_sizes)
        if self.vector.shape != (expected,):
            raise InvalidArgument(
                f'{self.layer_sizes} needs {expected} parameters, '
                f'got shape {self.vector.shape}'
            )
        if not np.all(np.isfinite(self.vector)):
            raise NumericFault('Non-finite network parameters')

    def layers(self, vector: Optional[np.ndarray] = None):
        """The ``(weights, biases)`` views of each layer"""
        vector = self.vector if vector is None else vector
        out, i = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = vector[i : i + n_in * n_out].reshape(n_in, n_out)
            i += n_in * n_out
            b = vector[i : i + n_out]
            i += n_out
            out.append((w, b))
        return out

    def to_vector(self) -> np.ndarray:
        return self.vector.copy()

    def with_vector(self, vector: np.ndarray) -> 'MLPParams':
        return MLPParams(self.layer_sizes, np.array(vector, dtype=np.float64))

    def copy(self) -> 'MLPParams':
        return self.with_vector(self.vector)

    def __eq__(self, other):
        return (
            isinstance(other, MLPParams)
            and self.layer_sizes == other.layer_sizes
            and np.array_equal(self.vector, other.vector)
        )


LearnedBehavior = Union[QTable, MLPParams]


def n_mlp_params(layer_sizes: Sequence[int]) -> int:
    """
    >>> n_mlp_params((4, 64, 2))
    450
    """
    return sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_mlp(
    layer_sizes: Sequence[int], rng: np.random.Generator, *, zero_output: bool = False
) -> MLPParams:
    """Glorot-uniform weights, zero biases (and optionally an all-zero output layer)"""
    params = MLPParams(tuple(layer_sizes), np.zeros(n_mlp_params(layer_sizes)))
    layers = params.layers()
    for i, (w, _) in enumerate(layers):
        if zero_output and i == len(layers) - 1:
            continue
        limit = math.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return params


def merge_learned(a: LearnedBehavior, b: LearnedBehavior) -> LearnedBehavior:
    """The learned behavior an offspring inherits from its two parents.

    Networks are averaged element-wise. Q-tables are averaged over the union of their
    keys, a key only one parent has keeping that parent's value.

    >>> merge_learned(
    ...     MLPParams((1, 1), np.array([0.0, 0.0])), MLPParams((1, 1), np.array([1.0, 1.0]))
    ... ).vector
    array([0.5, 0.5])
    """
    if isinstance(a, QTable) and isinstance(b, QTable):
        if (a.total_bins, a.action_count) != (b.total_bins, b.action_count):
            raise InvalidArgument('Cannot merge Q-tables of different shapes')
        entries = {}
        for k in sorted(a.entries.keys() | b.entries.keys()):
            if k in a.entries and k in b.entries:
                entries[k] = (a.entries[k] + b.entries[k]) / 2
            else:
                entries[k] = a.entries[k] if k in a.entries else b.entries[k]
        return QTable(a.total_bins, a.action_count, entries)
    if isinstance(a, MLPParams) and isinstance(b, MLPParams):
        if a.layer_sizes != b.layer_sizes:
            raise InvalidArgument(
                f'Cannot merge networks of architectures {a.layer_sizes} '
                f'and {b.layer_sizes}'
            )
        return MLPParams(a.layer_sizes, (a.vector + b.vector) / 2)
    raise InvalidArgument(
        f'Cannot merge a {type(a).__name__} with a {type(b).__name__}'
    )


# --------------------------------------------------------------------------------------
# Serialization

_MLP_MAGIC = b'MLP\x00'


def serialize_learned(learned: LearnedBehavior) -> bytes:
    """Q-tables as sorted json key/value lists, networks as a layer-size header
    followed by the little-endian float64 parameters."""
    if isinstance(learned, QTable):
        jdict = {
            'kind': 'qtable',
            'total_bins': learned.total_bins,
            'action_count': learned.action_count,
            'entries': [[b, a, v] for (b, a), v in sorted(learned.entries.items())],
        }
        return json.dumps(jdict, sort_keys=True, separators=(',', ':')).encode()
    if isinstance(learned, MLPParams):
        sizes = learned.layer_sizes
        header = _MLP_MAGIC + struct.pack(f'<I{len(sizes)}I', len(sizes), *sizes)
        return header + learned.vector.astype('<f8').tobytes()
    raise InvalidArgument(f'Not a learned behavior: {type(learned).__name__}')


def deserialize_learned(data: bytes) -> LearnedBehavior:
    if data.startswith(_MLP_MAGIC):
        i = len(_MLP_MAGIC)
        (n,) = struct.unpack_from('<I', data, i)
        sizes = struct.unpack_from(f'<{n}I', data, i + 4)
        vector = np.frombuffer(data, dtype='<f8', offset=i + 4 + 4 * n)
        return MLPParams(sizes, vector.astype(np.float64))
    try:
        jdict = json.loads(data)
        assert jdict['kind'] == 'qtable'
        entries = {(int(b), int(a)): float(v) for b, a, v in jdict['entries']}
        return QTable(int(jdict['total_bins']), int(jdict['action_count']), entries)
    except (ValueError, KeyError, TypeError, AssertionError) as e:
        raise InvalidArgument(f'Not a serialized learned behavior: {e}')


# --------------------------------------------------------------------------------------
# Tabular Q-learning


def greedy_action(values: Sequence[float]) -> int:
    """Index of the largest value, the lowest one on ties.

    >>> greedy_action([1.0, 5.0, 5.0]), greedy_action([0.0, 0.0])
    (1, 0)
    """
    best = 0
    for a in range(1, len(values)):
        if values[a] > values[best]:
            best = a
    return best


def q_act(
    table: QTable,
    grid: BinGrid,
    obs: Observation,
    rng: np.random.Generator,
    epsilon: float = 0.0,
) -> int:
    """Epsilon-greedy action over the action values of the bin of ``obs``"""
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(table.action_count))
    return greedy_action(table.values(bin_index(grid, obs)))


def q_update(
    table: QTable,
    state: int,
    action: int,
    reward: float,
    next_state: int,
    terminal: bool,
    *,
    alpha: float,
    gamma: float,
) -> float:
    """One-step Q-learning update of ``Q(state, action)``; returns the new value.

    >>> t = QTable(2, 2)
    >>> q_update(t, 0, 0, 2.0, 1, False, alpha=1.0, gamma=0.0)
    2.0
    >>> t = QTable(2, 2, {(1, 1): 2.0})
    >>> round(q_update(t, 0, 0, 1.0, 1, False, alpha=0.5, gamma=0.9), 12)
    1.4
    """
    bootstrap = 0.0 if terminal else gamma * max(table.values(next_state))
    q = table.entries.get((state, action), 0.0)
    q = q + alpha * (reward + bootstrap - q)
    if not math.isfinite(q):
        raise NumericFault(f'Non-finite Q-value at {(state, action)}')
    table.entries[(state, action)] = q
    return q


def q_observe(
    table: QTable, grid: BinGrid, transition: Transition, *, alpha: float, gamma: float
) -> bool:
    """Learn from a transition, unless its reward was withheld. Returns whether it did."""
    if transition.reward is None:
        return False
    q_update(
        table,
        bin_index(grid, transition.obs),
        transition.action,
        transition.reward,
        bin_index(grid, transition.next_obs),
        transition.terminal,
        alpha=alpha,
        gamma=gamma,
    )
    return True


# --------------------------------------------------------------------------------------
# Q-network


def mlp_forward(params: MLPParams, x: np.ndarray, vector: Optional[np.ndarray] = None):
    """Outputs of the net (rectifier hidden units, linear outputs) for a batch ``x``,
    and the per-layer ``(input, pre-activation)`` cache backprop needs."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = []
    layers = params.layers(vector)
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        cache.append((h, z))
        h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
    return h, cache


def td_loss_and_grad(
    params: MLPParams,
    x: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    vector: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Mean squared TD error of ``Q(x_i, actions_i)`` vs ``targets_i``, and its
    gradient w.r.t. the parameter vector."""
    vector = params.vector if vector is None else vector
    out, cache = mlp_forward(params, x, vector)
    n = out.shape[0]
    rows = np.arange(n)
    errors = out[rows, actions] - targets
    loss = float(np.mean(errors ** 2))
    d_out = np.zeros_like(out)
    d_out[rows, actions] = 2.0 * errors / n
    layers = params.layers(vector)
    grads = []
    delta = d_out
    for i in range(len(layers) - 1, -1, -1):
        h_in, _ = cache[i]
        w, _ = layers[i]
        grads.append((h_in.T @ delta, delta.sum(axis=0)))
        if i > 0:
            _, z_prev = cache[i - 1]
            delta = (delta @ w.T) * (z_prev > 0)
    grads.reverse()
    grad = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, grad


def q_network_values(params: MLPParams, obs: Observation) -> np.ndarray:
    values = mlp_forward(params, obs)[0][0]
    if not np.all(np.isfinite(values)):
        raise NumericFault(f'Non-finite Q-network output for observation {obs}')
    return values


def dqn_act(
    params: MLPParams, obs: Observation, rng: np.random.Generator, epsilon: float = 0.0
) -> int:
    """Epsilon-greedy action over the Q-network's outputs.

    >>> p = MLPParams((1, 1, 2), np.array([2.0, -1.0, 1.0, -1.0, 0.0, 0.0]))
    >>> dqn_act(p, (1.0,), None), dqn_act(p, (0.0,), None)
    (0, 0)
    """
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(params.layer_sizes[-1]))
    return greedy_action(q_network_values(params, obs))


class ReplayBuffer:
    """Fixed capacity FIFO ring of transitions (with feedback)"""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise InvalidArgument('capacity must be positive')
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminals = np.zeros(capacity)
        self.size = 0
        self.ptr = 0

    def __len__(self):
        return self.size

    def push(self, transition: Transition):
        if transition.reward is None:
            raise InvalidArgument('Transitions without feedback are not replayed')
        i = self.ptr
        self.obs[i] = transition.obs
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_obs[i] = transition.next_obs
        self.terminals[i] = float(transition.terminal)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self.size, size=n)
        return (
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx],
            self.terminals[idx],
        )

    def state_bytes(self) -> bytes:
        arrays = (self.obs, self.actions, self.rewards, self.next_obs, self.terminals)
        return struct.pack('<qq', self.size, self.ptr) + b''.join(
            a[: self.size].tobytes() for a in arrays
        )


# --------------------------------------------------------------------------------------
# Learners


@dataclass
class QConfig:
    alpha: float = 0.1
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_episodes: Optional[int] = None  # None: over the training length given


@dataclass
class DQNConfig:
    hidden_sizes: Tuple[int, ...] = (64,)
    learning_rate: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 32
    buffer_capacity: int = 10_000
    train_interval: int = 1
    target_sync: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_episodes: Optional[int] = None


LearnerConfig = Union[QConfig, DQNConfig]
learner_config_classes = {'q': QConfig, 'dqn': DQNConfig}


def learner_config(algo: str, overrides: Optional[dict] = None) -> LearnerConfig:
    """The config of the learner of ``algo``, with ``overrides``.

    >>> learner_config('q', {'alpha': 0.5}).alpha
    0.5
    >>> learner_config('ppo')
    Traceback (most recent call last):
      ...
    evorl.util.ConfigError: algo='ppo' is not implemented (implemented: 'q', 'dqn')
    """
    if algo not in learner_config_classes:
        raise ConfigError(f"algo={algo!r} is not implemented (implemented: 'q', 'dqn')")
    cls = learner_config_classes[algo]
    overrides = dict(overrides or {})
    known = {f.name for f in fields(cls)}
    if unknown := set(overrides) - known:
        raise ConfigError(f'Unknown {algo} learner config keys: {sorted(unknown)}')
    if 'hidden_sizes' in overrides:
        overrides['hidden_sizes'] = tuple(overrides['hidden_sizes'])
    return cls(**overrides)


class Learner(ABC):
    """What the overall policy needs from a learner.

    ``act`` picks an action (greedily when ``greedy``), ``observe`` learns from a
    transition (a no-op when the reward was withheld), ``end_episode`` advances the
    exploration schedule, and ``state_bytes`` snapshots everything that learning can
    change.
    """

    behavior: LearnedBehavior

    def __init__(self, cfg, rng: np.random.Generator, decay_episodes: int):
        self.cfg = cfg
        self.rng = rng
        self.decay_episodes = (
            cfg.decay_episodes if cfg.decay_episodes is not None else decay_episodes
        )
        self.episodes = 0
        self.update_count = 0

    @property
    def epsilon(self) -> float:
        start, end = self.cfg.epsilon_start, self.cfg.epsilon_end
        if self.episodes >= self.decay_episodes:
            return end
        return start + (end - start) * self.episodes / self.decay_episodes

    def end_episode(self):
        self.episodes += 1

    @abstractmethod
    def act(self, obs: Observation, *, greedy: bool = False) -> int:
        pass

    @abstractmethod
    def observe(self, transition: Transition) -> None:
        pass

    def state_bytes(self) -> bytes:
        return serialize_learned(self.behavior) + struct.pack(
            '<qq', self.episodes, self.update_count
        )


class QLearner(Learner):
    def __init__(
        self,
        table: QTable,
        grid: BinGrid,
        cfg: QConfig,
        rng: np.random.Generator,
        *,
        decay_episodes: int = 0,
    ):
        super().__init__(cfg, rng, decay_episodes)
        if table.total_bins != grid.total_bins:
            raise InvalidArgument('The Q-table was not made for this grid')
        self.behavior = table
        self.grid = grid

    def act(self, obs, *, greedy=False):
        epsilon = 0.0 if greedy else self.epsilon
        return q_act(self.behavior, self.grid, obs, self.rng, epsilon)

    def observe(self, transition):
        if q_observe(
            self.behavior,
            self.grid,
            transition,
            alpha=self.cfg.alpha,
            gamma=self.cfg.gamma,
        ):
            self.update_count += 1


class DQNLearner(Learner):
    def __init__(
        self,
        params: MLPParams,
        cfg: DQNConfig,
        rng: np.random.Generator,
        *,
        decay_episodes: int = 0,
    ):
        super().__init__(cfg, rng, decay_episodes)
        self.behavior = params
        self.target_vector = params.vector.copy()
        self.buffer = ReplayBuffer(cfg.buffer_capacity, params.layer_sizes[0])
        self.steps = 0

    def act(self, obs, *, greedy=False):
        epsilon = 0.0 if greedy else self.epsilon
        return dqn_act(self.behavior, obs, self.rng, epsilon)

    def observe(self, transition):
        dqn_observe(self, transition)

    def train_step(self) -> float:
        """One SGD step on a replayed minibatch; returns its loss"""
        cfg = self.cfg
        x, actions, rewards, next_x, terminals = self.buffer.sample(
            self.rng, cfg.batch_size
        )
        next_values = mlp_forward(self.behavior, next_x, self.target_vector)[0]
        targets = rewards + cfg.gamma * next_values.max(axis=1) * (1.0 - terminals)
        loss, grad = td_loss_and_grad(self.behavior, x, actions, targets)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericFault('Non-finite TD loss or gradient')
        self.behavior.vector -= cfg.learning_rate * grad
        self.update_count += 1
        return loss

    def state_bytes(self) -> bytes:
        return b''.join(
            [
                super().state_bytes(),
                struct.pack('<q', self.steps),
                self.target_vector.astype('<f8').tobytes(),
                self.buffer.state_bytes(),
            ]
        )


def dqn_observe(learner: DQNLearner, transition: Transition) -> None:
    """Replay-buffer insertion, periodic training and target syncing.

    A transition without reward is discarded: no insertion, no step count, no update.
    """
    if transition.reward is None:
        return
    cfg = learner.cfg
    learner.buffer.push(transition)
    learner.steps += 1
    if learner.steps % cfg.train_interval == 0 and len(learner.buffer) >= cfg.batch_size:
        learner.train_step()
    if learner.steps % cfg.target_sync == 0:
        learner.target_vector = learner.behavior.vector.copy()


# --------------------------------------------------------------------------------------
# Factories


def initial_behavior(
    algo: str,
    spec: EnvSpec,
    grid: BinGrid,
    cfg: LearnerConfig,
    rng: np.random.Generator,
) -> LearnedBehavior:
    """The learned behavior of a newborn agent with no ancestors"""
    if algo == 'q':
        return QTable(grid.total_bins, spec.action_count)
    if algo == 'dqn':
        sizes = (spec.state_dim, *cfg.hidden_sizes, spec.action_count)
        return init_mlp(sizes, rng)
    raise ConfigError(f'algo={algo!r} is not implemented')


def make_learner(
    algo: str,
    behavior: LearnedBehavior,
    grid: BinGrid,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    *,
    decay_episodes: int = 0,
) -> Learner:
    """A learner of ``algo`` that learns by modifying ``behavior`` in place"""
    if algo == 'q':
        return QLearner(behavior, grid, cfg, rng, decay_episodes=decay_episodes)
    if algo == 'dqn':
        return DQNLearner(behavior, cfg, rng, decay_episodes=decay_episodes)
    raise ConfigError(f'algo={algo!r} is not implemented')
