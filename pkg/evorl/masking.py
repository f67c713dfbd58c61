"""State-space binning and rewardless-state masking.

The state space of an env is cut into a grid of bins. A seeded fraction of those bins
is marked rewardless: a step taken *from* a rewardless bin gives no feedback
(``reward is None``) to the learner. The true reward is still accumulated into a
hidden episode total that only evaluation reads.

>>> grid = BinGrid((16, 16), lower=(-1.2, -0.07), upper=(0.6, 0.07))
>>> grid.total_bins
256
>>> bin_index(grid, (-1.2, -0.07)), bin_index(grid, (0.6, 0.07))
(0, 255)
>>> mask = build_mask(grid, 0.3, seed=7)
>>> len(mask.masked)
76
>>> mask.masked == build_mask(grid, 0.3, seed=7).masked
True
"""

import math
from dataclasses import dataclass, field
from typing import Tuple, Optional, FrozenSet, Sequence, Union

import numpy as np

from evorl.constants import MAX_REWARDLESS_FRACTION
from evorl.envs import ControlEnv, EnvSpec, Observation, make_env, get_env_spec
from evorl.util import InvalidArgument, ProtocolViolation


# --------------------------------------------------------------------------------------
# Bin grid


@dataclass(frozen=True)
class BinGrid:
    """A row-major grid of ``prod(bins_per_dim)`` bins over a clipped box."""

    bins_per_dim: Tuple[int, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    total_bins: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, 'bins_per_dim', tuple(int(n) for n in self.bins_per_dim))
        object.__setattr__(self, 'lower', tuple(float(x) for x in self.lower))
        object.__setattr__(self, 'upper', tuple(float(x) for x in self.upper))
        if not (len(self.bins_per_dim) == len(self.lower) == len(self.upper)):
            raise InvalidArgument(
                'bins_per_dim, lower and upper must have the same length'
            )
        if not self.bins_per_dim:
            raise InvalidArgument('A grid needs at least one dimension')
        if any(n < 1 for n in self.bins_per_dim):
            raise InvalidArgument(f'bins_per_dim must be positive: {self.bins_per_dim}')
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InvalidArgument(f'Dimension {i}: need finite lower < upper')
        object.__setattr__(self, 'total_bins', math.prod(self.bins_per_dim))

    @property
    def dims(self) -> int:
        return len(self.bins_per_dim)

    def cell_bounds(self, index: int) -> Tuple[Tuple[float, float], ...]:
        """The (low, high) bounds of the bin of a given index, per dimension"""
        if not 0 <= index < self.total_bins:
            raise InvalidArgument(f'Bin index out of range: {index}')
        coords = []
        for n in reversed(self.bins_per_dim):
            index, c = divmod(index, n)
            coords.append(c)
        coords.reverse()
        return tuple(
            (lo + c * (hi - lo) / n, lo + (c + 1) * (hi - lo) / n)
            for c, n, lo, hi in zip(coords, self.bins_per_dim, self.lower, self.upper)
        )


def grid_for(
    spec: Union[EnvSpec, str],
    bins_per_dim: Optional[Sequence[int]] = None,
    *,
    lower: Optional[Sequence[float]] = None,
    upper: Optional[Sequence[float]] = None,
) -> BinGrid:
    """The bin grid of an env, with its default bins and bounds unless overridden.

    >>> grid_for('cartpole').total_bins
    256
    >>> grid_for('acrobot').total_bins
    729
    """
    if isinstance(spec, str):
        spec = get_env_spec(spec)
    return BinGrid(
        tuple(bins_per_dim or spec.dflt_bins_per_dim),
        lower=tuple(lower or spec.low),
        upper=tuple(upper or spec.high),
    )


def bin_index(grid: BinGrid, obs: Observation) -> int:
    """The row-major index of the bin containing ``obs`` (clipped to the grid's box).

    >>> grid = BinGrid((2, 3), lower=(0, 0), upper=(1, 3))
    >>> bin_index(grid, (0.9, 2.5)), bin_index(grid, (-5, 100))
    (5, 2)
    """
    if len(obs) != grid.dims:
        raise InvalidArgument(
            f'Observation has {len(obs)} dimensions, grid has {grid.dims}'
        )
    index = 0
    for v, n, lo, hi in zip(obs, grid.bins_per_dim, grid.lower, grid.upper):
        if not math.isfinite(v):
            raise InvalidArgument(f'Non-finite observation: {obs}')
        v = min(max(v, lo), hi)
        c = min(int((v - lo) / (hi - lo) * n), n - 1)
        index = index * n + c
    return index


# --------------------------------------------------------------------------------------
# Rewardless mask


@dataclass(frozen=True)
class RewardlessMask:
    masked: FrozenSet[int]
    fraction: float
    seed: int
    total_bins: int

    def __contains__(self, index: int) -> bool:
        return index in self.masked

    def to_jdict(self, env: str, grid: BinGrid) -> dict:
        """The json-serializable description of the mask (enough to replay it)"""
        return {
            'env': env,
            'bins_per_dim': list(grid.bins_per_dim),
            'fraction': self.fraction,
            'seed': self.seed,
            'masked_bins': sorted(self.masked),
        }


def mask_size(fraction: float, total_bins: int) -> int:
    """How many bins a mask of ``fraction`` has (the floor; never above the fraction).

    >>> mask_size(0.3, 256), mask_size(0.5, 729), mask_size(0.0, 256)
    (76, 364, 0)
    """
    return math.floor(fraction * total_bins)


def build_mask(grid: Union[BinGrid, int], fraction: float, seed: int) -> RewardlessMask:
    """Mark ``floor(fraction * total_bins)`` bins as rewardless.

    The bins are the prefix of a seeded Fisher-Yates partial shuffle of all bin
    indices, so the mask is a function of ``(seed, fraction, total_bins)``.
    """
    total_bins = grid if isinstance(grid, int) else grid.total_bins
    if not 0.0 <= fraction <= MAX_REWARDLESS_FRACTION:
        raise InvalidArgument(
            f'fraction must be in [0, {MAX_REWARDLESS_FRACTION}]: {fraction}'
        )
    k = mask_size(fraction, total_bins)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    bins = list(range(total_bins))
    for i in range(k):
        j = int(rng.integers(i, total_bins))
        bins[i], bins[j] = bins[j], bins[i]
    return RewardlessMask(frozenset(bins[:k]), float(fraction), int(seed), total_bins)


def mask_from_jdict(jdict: dict) -> Tuple[BinGrid, RewardlessMask]:
    """Rebuild the ``(grid, mask)`` described by ``RewardlessMask.to_jdict``.

    The stored bins are used as is (not regenerated), so an archived mask replays
    bit-exactly.
    """
    try:
        grid = grid_for(jdict['env'], jdict['bins_per_dim'])
        masked = frozenset(int(b) for b in jdict['masked_bins'])
        fraction, seed = float(jdict['fraction']), int(jdict['seed'])
    except KeyError as e:
        raise InvalidArgument(f'Missing field in mask description: {e}')
    if any(not 0 <= b < grid.total_bins for b in masked):
        raise InvalidArgument('Mask description has bins outside of the grid')
    return grid, RewardlessMask(masked, fraction, seed, grid.total_bins)


# --------------------------------------------------------------------------------------
# Masked env


@dataclass(frozen=True)
class StepOutcome:
    """What the agent gets from a step: ``reward`` is None when feedback is withheld"""

    observation: Observation
    reward: Optional[float]
    terminal: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


class MaskedEnv:
    """A control env whose reward is withheld in the rewardless bins of a mask.

    Masking never touches the dynamics. The true (unmasked) rewards of the current
    episode are summed in a hidden total, read with ``episode_true_return``.
    """

    def __init__(self, env: ControlEnv, grid: BinGrid, mask: RewardlessMask):
        if grid.dims != env.spec.state_dim:
            raise InvalidArgument(
                f'Grid has {grid.dims} dimensions, {env.spec.name} has '
                f'{env.spec.state_dim}'
            )
        if mask.total_bins != grid.total_bins:
            raise InvalidArgument('The mask was not built for this grid')
        self.env = env
        self.grid = grid
        self.mask = mask
        self._obs = None
        self._true_return = 0.0

    @property
    def spec(self) -> EnvSpec:
        return self.env.spec

    def reset(self, rng: np.random.Generator) -> Observation:
        self._obs = self.env.reset(rng)
        self._true_return = 0.0
        return self._obs

    def step(self, action: int) -> StepOutcome:
        if self._obs is None or self.env.done:
            raise ProtocolViolation('Reset the env before stepping it')
        pre_step_bin = bin_index(self.grid, self._obs)
        obs, reward, terminal, truncated = self.env.step(action)
        self._true_return += reward
        self._obs = obs
        if pre_step_bin in self.mask.masked:
            reward = None
        return StepOutcome(obs, reward, terminal, truncated)

    def episode_true_return(self) -> float:
        """The unmasked return of the current (or last) episode"""
        return self._true_return

    def mask_jdict(self) -> dict:
        return self.mask.to_jdict(self.spec.name, self.grid)

    def __repr__(self):
        return (
            f'{type(self).__name__}({self.spec.name!r}, '
            f'fraction={self.mask.fraction}, seed={self.mask.seed})'
        )


def masked_step(env: MaskedEnv, action: int) -> StepOutcome:
    return env.step(action)


def make_masked_env(
    name: str,
    fraction: float = 0.0,
    seed: int = 0,
    *,
    bins_per_dim: Optional[Sequence[int]] = None,
) -> MaskedEnv:
    """Make the env ``name`` with a freshly built rewardless mask.

    >>> env = make_masked_env('mountaincar', 0.5, seed=1)
    >>> len(env.mask.masked)
    128
    """
    grid = grid_for(name, bins_per_dim)
    return MaskedEnv(make_env(name), grid, build_mask(grid, fraction, seed))
