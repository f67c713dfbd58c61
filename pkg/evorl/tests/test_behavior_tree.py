import itertools

import numpy as np
import pytest

from evorl.behavior_tree import (
    NodeKind,
    Signal,
    act,
    cond,
    depth,
    inv,
    iter_paths,
    parse_tree,
    psel,
    pseq,
    rep,
    replace_at,
    ruf,
    sel,
    seq,
    size,
    subtree_at,
    tick,
    to_sexpr,
    validate_tree,
)
from evorl.gp import PrimitiveSet, EXTENDED_COMPOSITES, random_tree
from evorl.util import InvalidArgument


# --------------------------------------------------------------------------------------
# Exhaustive comparison with a reference interpreter


def reference_tick(node, x0):
    """(signal, action) of a tree of sel/seq/inv/cond(x0 < 0)/act nodes"""
    kind = node.kind
    if kind is NodeKind.CONDITION:
        return ('S' if x0 < 0 else 'F'), None
    if kind is NodeKind.ACTION:
        return 'S', node.action
    if kind is NodeKind.INVERT:
        s, a = reference_tick(node.children[0], x0)
        if a is not None:
            return 'S', a
        return ('F' if s == 'S' else 'S'), None
    stop_on = 'S' if kind is NodeKind.SELECTOR else 'F'
    for child in node.children:
        s, a = reference_tick(child, x0)
        if a is not None:
            return 'S', a
        if s == stop_on:
            return stop_on, None
    return ('F' if kind is NodeKind.SELECTOR else 'S'), None


def all_trees(max_depth, max_arity=2):
    leaves = [cond(0, '<', 0.0), act(0), act(1)]
    if max_depth == 1:
        return leaves
    smaller = all_trees(max_depth - 1, max_arity)
    trees = leaves + [inv(t) for t in smaller]
    for arity in range(1, max_arity + 1):
        for children in itertools.product(smaller, repeat=arity):
            trees.append(sel(*children))
            trees.append(seq(*children))
    return trees


_signal_letters = {Signal.SUCCESS: 'S', Signal.FAILURE: 'F', Signal.RUNNING: 'R'}


def test_tick_agrees_with_reference_on_all_small_trees():
    trees = all_trees(3)
    assert len(trees) == 1893
    assert all(depth(t) <= 3 for t in trees)
    for tree in trees:
        for x0 in (-1.0, 1.0):
            result = tick(tree, (x0,))
            expected = reference_tick(tree, x0)
            assert (_signal_letters[result.signal], result.chosen_action) == expected


# --------------------------------------------------------------------------------------
# Semantics


def test_first_action_wins():
    tree = seq(cond(0, '>=', 0.0), act(1), act(0))
    r = tick(tree, (0.5,))
    assert r.chosen_action == 1 and r.signal is Signal.SUCCESS
    assert r.nodes_visited == 3


def test_no_action_means_no_opinion():
    assert tick(cond(0, '<', 0.0), (1.0,)).chosen_action is None
    assert tick(inv(cond(0, '<', 0.0)), (1.0,)).signal is Signal.SUCCESS
    assert tick(seq(cond(0, '<', 0.0), act(1)), (1.0,)).chosen_action is None


def test_repeat_ticks_its_child_at_most_repeat_cap_times():
    tree = rep(100, cond(0, '<', 0.0))
    assert tick(tree, (1.0,), repeat_cap=5).nodes_visited == 1 + 5
    assert tick(rep(3, cond(0, '<', 0.0)), (1.0,)).nodes_visited == 1 + 3
    assert tick(rep(3, act(2)), (0.0,)).nodes_visited == 2


def test_repeat_until_fail():
    # succeeds as soon as its child fails
    r = tick(ruf(cond(0, '<', 0.0)), (1.0,))
    assert r.signal is Signal.SUCCESS and r.nodes_visited == 2
    # a child that never fails is ticked repeat_cap times
    r = tick(ruf(cond(0, '<', 0.0)), (-1.0,), repeat_cap=7)
    assert r.nodes_visited == 1 + 7 and r.signal is Signal.SUCCESS


def test_parallel_nodes():
    true, false = cond(0, '<', 0.0), cond(0, '>=', 0.0)
    obs = (-1.0,)
    assert tick(pseq(true, true), obs).signal is Signal.SUCCESS
    assert tick(pseq(true, false), obs).signal is Signal.FAILURE
    assert tick(psel(false, false), obs).signal is Signal.FAILURE
    assert tick(psel(false, true), obs).signal is Signal.SUCCESS
    # all children are ticked, unlike their sequential counterparts
    assert tick(pseq(false, true, true), obs).nodes_visited == 4
    assert tick(seq(false, true, true), obs).nodes_visited == 2
    assert tick(psel(false, act(1), act(0)), obs).chosen_action == 1


def test_condition_on_missing_feature():
    with pytest.raises(InvalidArgument):
        tick(cond(3, '<', 0.0), (0.0, 0.0))


def test_leaves_are_validated_when_ticked():
    with pytest.raises(InvalidArgument, match='Invalid feature index'):
        tick(cond(-1, '<', 0.0), (0.0, 1.0))
    with pytest.raises(InvalidArgument, match='Invalid feature index'):
        tick(sel(cond(0, '<', 5.0), cond(-2, '>=', 0.0)), (9.0, 1.0))
    with pytest.raises(InvalidArgument, match='Invalid action'):
        tick(seq(cond(0, '<', 5.0), act(-1)), (0.0, 1.0))


# --------------------------------------------------------------------------------------
# Structure and validation


def test_paths_and_replacement():
    tree = sel(seq(cond(1, '<', 0.5), act(0)), act(1))
    paths = dict(iter_paths(tree))
    assert subtree_at(tree, (0, 1)) == act(0) == paths[(0, 1)]
    new = replace_at(tree, (0, 1), act(2))
    assert subtree_at(new, (0, 1)) == act(2)
    assert subtree_at(tree, (0, 1)) == act(0)  # the original is untouched
    assert size(new) == size(tree) == 5
    assert replace_at(tree, (), act(3)) == act(3)


def test_validation():
    ok = sel(cond(0, '<', 0.0), act(1))
    assert validate_tree(ok, state_dim=1, action_count=2) is ok
    with pytest.raises(InvalidArgument):
        validate_tree(ok, state_dim=1, action_count=1)
    with pytest.raises(InvalidArgument):
        validate_tree(cond(2, '<', 0.0), state_dim=2)
    with pytest.raises(InvalidArgument):
        validate_tree(cond(0, '<', float('inf')))
    with pytest.raises(InvalidArgument):
        validate_tree(rep(0, act(0)))
    deep = act(0)
    for _ in range(6):
        deep = inv(deep)
    assert depth(deep) == 7
    with pytest.raises(InvalidArgument):
        validate_tree(deep)
    wide = sel(*[act(0)] * 64)
    with pytest.raises(InvalidArgument):
        validate_tree(wide)


@pytest.mark.parametrize(
    'sexpr',
    [
        '(act 0)',
        '(sel (seq (cond 0 < -0.25) (act 1)) (inv (cond 3 >= 1.5)) (act 0))',
        '(rep 4 (ruf (pseq (cond 1 < 2e-05) (psel (act 2)))))',
    ],
)
def test_sexpr_is_canonical(sexpr):
    assert to_sexpr(parse_tree(sexpr)) == sexpr


def test_random_trees_survive_sexpr_round_trip():
    pset = PrimitiveSet(
        state_dim=4,
        action_count=2,
        lower=(-2.4, -3.0, -0.2, -3.5),
        upper=(2.4, 3.0, 0.2, 3.5),
        composites=EXTENDED_COMPOSITES,
    )
    rng = np.random.default_rng(0)
    for _ in range(50):
        tree = random_tree((1, 5), pset, rng)
        assert parse_tree(to_sexpr(tree)) == tree


@pytest.mark.parametrize(
    'bad', ['', '(act)', '(act 0', '(foo 1)', 'act 0', '(act 0) (act 1)', '(sel)']
)
def test_malformed_sexpr(bad):
    with pytest.raises(InvalidArgument):
        parse_tree(bad)
