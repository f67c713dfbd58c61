from collections import Counter
from types import SimpleNamespace

import numpy as np
import pytest

from evorl.behavior_tree import act, cond, depth, inv, sel, seq, size, validate_tree
from evorl.gp import (
    GPConfig,
    PrimitiveSet,
    init_trees,
    mutate_inherited,
    primitive_set,
    random_tree,
    subtree_crossover,
    subtree_mutation,
    tournament_select,
)
from evorl.learners import MLPParams, QTable
from evorl.masking import grid_for
from evorl.util import ConfigError, InvalidArgument

PSET = primitive_set(grid_for('cartpole'), 2)


def test_config_validation():
    with pytest.raises(ConfigError):
        GPConfig(crossover_rate=1.5)
    with pytest.raises(ConfigError):
        GPConfig(population_size=2, tournament_k=3)
    with pytest.raises(ConfigError):
        GPConfig(init_depth_range=(2, 8))
    with pytest.raises(ConfigError, match='Unknown GP config keys'):
        GPConfig.from_dict({'population': 30})
    assert GPConfig.from_dict({'init_depth_range': [1, 3]}).init_depth_range == (1, 3)


def test_initial_trees_are_well_formed():
    cfg = GPConfig()
    trees = init_trees(60, PSET, cfg, np.random.default_rng(0))
    assert len(trees) == 60
    for tree in trees:
        validate_tree(tree, state_dim=4, action_count=2, max_depth=4, max_nodes=64)
    assert len({str(t) for t in trees}) > 30


def test_full_trees_reach_the_drawn_depth():
    rng = np.random.default_rng(1)
    for _ in range(20):
        tree = random_tree((3, 3), PSET, rng, method='full')
        assert depth(tree) == 3 or size(tree) == 1


def test_random_tree_arguments():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidArgument):
        random_tree((0, 3), PSET, rng)
    with pytest.raises(InvalidArgument):
        random_tree((2, 3), PSET, rng, method='ramped')
    empty = PrimitiveSet(state_dim=0, action_count=0, lower=(), upper=())
    with pytest.raises(InvalidArgument):
        random_tree((1, 2), empty, rng)


def _population(fitnesses):
    return [SimpleNamespace(id=i, fitness=f) for i, f in enumerate(fitnesses)]


def test_full_tournament_returns_the_best():
    pop = _population([10, 20, 30])
    rng = np.random.default_rng(0)
    assert all(tournament_select(pop, 3, rng).fitness == 30 for _ in range(50))


def test_tournament_ties_go_to_the_lowest_id():
    pop = _population([5, 7, 7])
    assert tournament_select(pop, 3, np.random.default_rng(0)).id == 1


def test_size_one_tournaments_are_uniform():
    pop = _population([1, 2, 3])
    rng = np.random.default_rng(2)
    counts = Counter(tournament_select(pop, 1, rng).id for _ in range(3000))
    assert all(850 < counts[i] < 1150 for i in range(3))


def test_tournament_errors():
    with pytest.raises(InvalidArgument):
        tournament_select(_population([1, 2]), 3, np.random.default_rng(0))
    with pytest.raises(InvalidArgument):
        tournament_select(_population([1, None, 3]), 2, np.random.default_rng(0))


A = sel(seq(cond(2, '<', 0.0), act(0)), act(1))
B = seq(inv(cond(3, '>=', 0.1)), sel(act(1), act(0)))


def test_crossover_off_returns_the_parents():
    cfg = GPConfig(crossover_rate=0.0)
    assert subtree_crossover(A, B, np.random.default_rng(0), cfg) == (A, B)


def test_crossover_swaps_subtrees():
    cfg = GPConfig(crossover_rate=1.0)
    rng = np.random.default_rng(3)
    changed = 0
    for _ in range(50):
        a, b = subtree_crossover(A, B, rng, cfg)
        assert size(a) + size(b) == size(A) + size(B)
        assert depth(a) <= cfg.max_depth and depth(b) <= cfg.max_depth
        changed += (a, b) != (A, B)
    assert changed > 25


def test_crossover_respects_the_depth_limit():
    cfg = GPConfig(crossover_rate=1.0, max_depth=4, init_depth_range=(1, 3))
    deep = inv(inv(inv(act(0))))
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = subtree_crossover(deep, deep, rng, cfg)
        assert depth(a) <= 4 and depth(b) <= 4


def test_mutation():
    rng = np.random.default_rng(4)
    assert subtree_mutation(A, rng, GPConfig(mutation_rate=0.0), PSET) is A
    cfg = GPConfig(mutation_rate=1.0)
    mutants = [subtree_mutation(A, rng, cfg, PSET) for _ in range(50)]
    for m in mutants:
        validate_tree(m, state_dim=4, action_count=2, max_depth=cfg.max_depth)
    assert sum(m != A for m in mutants) > 25


def test_variation_is_deterministic():
    cfg = GPConfig(crossover_rate=1.0, mutation_rate=1.0)

    def vary(seed):
        rng = np.random.default_rng(seed)
        a, b = subtree_crossover(A, B, rng, cfg)
        return subtree_mutation(a, rng, cfg, PSET), subtree_mutation(b, rng, cfg, PSET)

    assert vary(7) == vary(7)


def test_inherited_mutation_off_returns_the_same_behavior():
    table = QTable(4, 2, {(0, 0): 1.0})
    cfg = GPConfig(inherited_mutation_rate=0.0)
    assert mutate_inherited(table, np.random.default_rng(0), cfg) is table


def test_inherited_mutation_only_perturbs_existing_entries():
    table = QTable(4, 2, {(0, 0): 1.0, (3, 1): -2.0})
    cfg = GPConfig(inherited_mutation_rate=1.0, inherited_element_prob=1.0)
    mutant = mutate_inherited(table, np.random.default_rng(0), cfg)
    assert set(mutant.entries) == set(table.entries)
    assert all(mutant.entries[k] != table.entries[k] for k in table.entries)
    assert table.entries == {(0, 0): 1.0, (3, 1): -2.0}


def test_inherited_mutation_noise_statistics():
    params = MLPParams((10, 100, 10), np.zeros(10 * 100 + 100 + 100 * 10 + 10))
    cfg = GPConfig(
        inherited_mutation_rate=1.0, inherited_element_prob=0.1, inherited_sigma=0.1
    )
    mutant = mutate_inherited(params, np.random.default_rng(5), cfg)
    hit = mutant.vector != 0
    assert 0.08 < hit.mean() < 0.12
    assert abs(mutant.vector[hit].mean()) < 0.03
    assert 0.085 < mutant.vector[hit].std() < 0.115
    assert not params.vector.any()
