"""Genetic programming over behavior trees.

Random tree generation (ramped half-and-half), tournament selection, subtree
crossover and subtree mutation of the instinctive genotype, plus the mutation of
the learned behavior an offspring inherits.

All operators are closed over well-formed trees: whatever they return satisfies the
arity, depth and node-count constraints of ``GPConfig``.

>>> import numpy as np
>>> pset = PrimitiveSet(state_dim=2, action_count=3, lower=(-1, -1), upper=(1, 1))
>>> rng = np.random.default_rng(0)
>>> tree = random_tree((2, 4), pset, rng)
>>> 1 <= depth(tree) <= 4
True
"""

from dataclasses import dataclass, fields
from typing import Tuple, Sequence, Optional, Protocol, TypeVar

import numpy as np

from evorl.behavior_tree import (
    BTNode,
    NodeKind,
    act,
    cond,
    comparators,
    decorator_kinds,
    depth,
    size,
    iter_paths,
    replace_at,
)
from evorl.constants import DFLT_MAX_DEPTH, DFLT_MAX_NODES
from evorl.util import InvalidArgument, ConfigError


@dataclass
class GPConfig:
    """Parameters of the evolutionary part. Defaults are those of the reference experiments."""

    population_size: int = 30
    generations: int = 200
    tournament_k: int = 3
    crossover_rate: float = 0.5
    mutation_rate: float = 0.15
    inherited_mutation_rate: float = 0.2
    inherited_element_prob: float = 0.1
    inherited_sigma: float = 0.1
    max_depth: int = DFLT_MAX_DEPTH
    max_nodes: int = DFLT_MAX_NODES
    init_depth_range: Tuple[int, int] = (2, 4)
    elitism: int = 1
    max_children: int = 3
    extended_primitives: bool = False

    def __post_init__(self):
        self.init_depth_range = tuple(self.init_depth_range)
        for name in (
            'crossover_rate',
            'mutation_rate',
            'inherited_mutation_rate',
            'inherited_element_prob',
        ):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f'{name} must be in [0, 1]: {getattr(self, name)}')
        if self.population_size < 1:
            raise ConfigError('population_size must be positive')
        if self.generations < 0:
            raise ConfigError('generations must be non-negative')
        if not 1 <= self.tournament_k <= self.population_size:
            raise ConfigError(
                f'tournament_k must be in [1, population_size]: {self.tournament_k}'
            )
        lo, hi = self.init_depth_range
        if not 1 <= lo <= hi <= self.max_depth:
            raise ConfigError(
                f'init_depth_range {self.init_depth_range} must be within '
                f'[1, max_depth={self.max_depth}]'
            )
        if not 0 <= self.elitism <= self.population_size:
            raise ConfigError('elitism must be in [0, population_size]')
        if self.inherited_sigma < 0:
            raise ConfigError('inherited_sigma must be non-negative')
        if self.max_children < 1 or self.max_nodes < 1:
            raise ConfigError('max_children and max_nodes must be positive')

    @classmethod
    def from_dict(cls, d: dict) -> 'GPConfig':
        known = {f.name for f in fields(cls)}
        if unknown := set(d) - known:
            raise ConfigError(f'Unknown GP config keys: {sorted(unknown)}')
        return cls(**d)


DFLT_COMPOSITES = (NodeKind.SELECTOR, NodeKind.SEQUENCE, NodeKind.INVERT)
EXTENDED_COMPOSITES = DFLT_COMPOSITES + (
    NodeKind.PARALLEL_SELECTOR,
    NodeKind.PARALLEL_SEQUENCE,
    NodeKind.REPEAT,
    NodeKind.REPEAT_UNTIL_FAIL,
)


@dataclass(frozen=True)
class PrimitiveSet:
    """What trees can be made of: composite kinds, conditions on ``state_dim``
    features with thresholds within ``[lower, upper]``, and ``action_count`` actions.
    """

    state_dim: int
    action_count: int
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    composites: Tuple[NodeKind, ...] = DFLT_COMPOSITES
    max_children: int = 3
    max_repeat: int = 4

    @property
    def has_leaves(self) -> bool:
        return self.state_dim > 0 or self.action_count > 0


def primitive_set(grid, action_count: int, cfg: Optional[GPConfig] = None) -> PrimitiveSet:
    """The primitive set of an env, given its bin grid (whose bounds thresholds use)"""
    cfg = cfg or GPConfig()
    return PrimitiveSet(
        state_dim=grid.dims,
        action_count=action_count,
        lower=grid.lower,
        upper=grid.upper,
        composites=EXTENDED_COMPOSITES if cfg.extended_primitives else DFLT_COMPOSITES,
        max_children=cfg.max_children,
    )


# --------------------------------------------------------------------------------------
# Random trees


def random_leaf(pset: PrimitiveSet, rng: np.random.Generator) -> BTNode:
    use_condition = pset.state_dim > 0 and (
        pset.action_count == 0 or rng.random() < 0.5
    )
    if use_condition:
        f = int(rng.integers(pset.state_dim))
        comparator = comparators[int(rng.integers(len(comparators)))]
        threshold = float(rng.uniform(pset.lower[f], pset.upper[f]))
        return cond(f, comparator, threshold)
    return act(int(rng.integers(pset.action_count)))


def _random_subtree(d, pset, rng, method):
    if d <= 1 or not pset.composites:
        return random_leaf(pset, rng)
    if method == 'grow' and rng.random() < 0.5:
        return random_leaf(pset, rng)
    kind = pset.composites[int(rng.integers(len(pset.composites)))]
    if kind in decorator_kinds:
        child = _random_subtree(d - 1, pset, rng, method)
        repeat = None
        if kind is NodeKind.REPEAT:
            repeat = int(rng.integers(2, pset.max_repeat + 1))
        return BTNode(kind, (child,), repeat=repeat)
    n_children = int(rng.integers(min(2, pset.max_children), pset.max_children + 1))
    return BTNode(
        kind, tuple(_random_subtree(d - 1, pset, rng, method) for _ in range(n_children))
    )


def random_tree(
    depth_range: Tuple[int, int],
    pset: PrimitiveSet,
    rng: np.random.Generator,
    *,
    method: str = 'grow',
    max_depth: int = DFLT_MAX_DEPTH,
    max_nodes: int = DFLT_MAX_NODES,
    max_attempts: int = 8,
) -> BTNode:
    """A random tree whose depth is at most a depth drawn from ``depth_range``.

    With ``method='full'`` every branch reaches the drawn depth; with ``'grow'``
    branches may stop earlier. Trees over ``max_nodes`` are redrawn, falling back
    to a single leaf.

    >>> pset = PrimitiveSet(state_dim=1, action_count=2, lower=(-1,), upper=(1,))
    >>> random_tree((1, 1), pset, np.random.default_rng(3)).is_leaf
    True
    """
    if not pset.has_leaves:
        raise InvalidArgument('The primitive set has no leaves to build trees with')
    if method not in ('grow', 'full'):
        raise InvalidArgument(f"method must be 'grow' or 'full', not {method!r}")
    lo, hi = depth_range
    if not 1 <= lo <= hi <= max_depth:
        raise InvalidArgument(
            f'depth_range {depth_range} must be within [1, max_depth={max_depth}]'
        )
    for _ in range(max_attempts):
        d = int(rng.integers(lo, hi + 1))
        tree = _random_subtree(d, pset, rng, method)
        if size(tree) <= max_nodes:
            return tree
    return random_leaf(pset, rng)


def init_trees(n: int, pset: PrimitiveSet, cfg: GPConfig, rng: np.random.Generator):
    """Ramped half-and-half: alternate full and grow generation per individual"""
    return [
        random_tree(
            cfg.init_depth_range,
            pset,
            rng,
            method='full' if i % 2 == 0 else 'grow',
            max_depth=cfg.max_depth,
            max_nodes=cfg.max_nodes,
        )
        for i in range(n)
    ]


# --------------------------------------------------------------------------------------
# Selection


class HasFitness(Protocol):
    id: int
    fitness: Optional[float]


Individual = TypeVar('Individual', bound=HasFitness)


def tournament_select(
    population: Sequence[Individual], k: int, rng: np.random.Generator
) -> Individual:
    """Sample ``k`` distinct individuals and return the fittest (lowest id on ties).

    >>> from types import SimpleNamespace as NS
    >>> pop = [NS(id=i, fitness=f) for i, f in enumerate([10, 20, 30])]
    >>> tournament_select(pop, 3, np.random.default_rng(0)).fitness
    30
    """
    if k < 1 or len(population) < k:
        raise InvalidArgument(
            f'Need at least k={k} individuals for a tournament, got {len(population)}'
        )
    if any(ind.fitness is None for ind in population):
        raise InvalidArgument('All individuals must have a fitness to be selected')
    idxs = rng.choice(len(population), size=k, replace=False)
    contenders = [population[int(i)] for i in idxs]
    return max(contenders, key=lambda ind: (ind.fitness, -ind.id))


# --------------------------------------------------------------------------------------
# Variation


def _fits(tree: BTNode, cfg: GPConfig) -> bool:
    return depth(tree) <= cfg.max_depth and size(tree) <= cfg.max_nodes


def subtree_crossover(
    tree_a: BTNode,
    tree_b: BTNode,
    rng: np.random.Generator,
    cfg: GPConfig,
    *,
    max_attempts: int = 8,
) -> Tuple[BTNode, BTNode]:
    """With probability ``cfg.crossover_rate``, swap two uniformly chosen subtrees.

    Swap points giving oversized offspring are redrawn; after ``max_attempts``
    failures the parents are returned.
    """
    if rng.random() >= cfg.crossover_rate:
        return tree_a, tree_b
    paths_a = list(iter_paths(tree_a))
    paths_b = list(iter_paths(tree_b))
    for _ in range(max_attempts):
        path_a, node_a = paths_a[int(rng.integers(len(paths_a)))]
        path_b, node_b = paths_b[int(rng.integers(len(paths_b)))]
        child_a = replace_at(tree_a, path_a, node_b)
        child_b = replace_at(tree_b, path_b, node_a)
        if _fits(child_a, cfg) and _fits(child_b, cfg):
            return child_a, child_b
    return tree_a, tree_b


def subtree_mutation(
    tree: BTNode,
    rng: np.random.Generator,
    cfg: GPConfig,
    pset: PrimitiveSet,
    *,
    max_attempts: int = 8,
) -> BTNode:
    """With probability ``cfg.mutation_rate``, replace a uniformly chosen subtree
    by a fresh random one that fits in the remaining depth budget."""
    if rng.random() >= cfg.mutation_rate:
        return tree
    paths = list(iter_paths(tree))
    for _ in range(max_attempts):
        path, _ = paths[int(rng.integers(len(paths)))]
        budget = cfg.max_depth - len(path)
        new_subtree = random_tree(
            (1, budget),
            pset,
            rng,
            method='grow',
            max_depth=cfg.max_depth,
            max_nodes=cfg.max_nodes,
        )
        mutant = replace_at(tree, path, new_subtree)
        if _fits(mutant, cfg):
            return mutant
    return tree


class Vectorizable(Protocol):
    def to_vector(self) -> np.ndarray:
        ...

    def with_vector(self, vector: np.ndarray) -> 'Vectorizable':
        ...


L = TypeVar('L', bound=Vectorizable)


def mutate_inherited(learned: L, rng: np.random.Generator, cfg: GPConfig) -> L:
    """Perturb an inherited learned behavior.

    With probability ``cfg.inherited_mutation_rate`` each scalar (Q-table entry or
    network weight) independently gets additive gaussian noise (scale
    ``cfg.inherited_sigma``) with probability ``cfg.inherited_element_prob``.
    """
    if rng.random() >= cfg.inherited_mutation_rate:
        return learned
    vector = learned.to_vector()
    hit = rng.random(vector.size) < cfg.inherited_element_prob
    noise = rng.normal(0.0, cfg.inherited_sigma, vector.size)
    return learned.with_vector(np.where(hit, vector + noise, vector))
