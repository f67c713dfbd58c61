"""Behavior trees: the instinctive part of an agent's policy.

A tree is ticked once per environment step, depth first from the root. The first
action node that is ticked decides the agent's action: the traversal stops there and
``Success`` is sent up to the root. If no action node is reached, the tree has no
opinion on the state, and the learner decides.

Trees are immutable, and have a canonical S-expression form:

>>> tree = parse_tree('(sel (seq (cond 2 >= 0.0) (act 1)) (act 0))')
>>> to_sexpr(tree)
'(sel (seq (cond 2 >= 0.0) (act 1)) (act 0))'
>>> tick(tree, (0.0, 0.0, 0.1, 0.0)).chosen_action
1
>>> tick(tree, (0.0, 0.0, -0.1, 0.0)).chosen_action
0
>>> tick(parse_tree('(cond 0 < 0.25)'), (0.0,))
TickResult(signal=<Signal.SUCCESS: 'success'>, chosen_action=None, nodes_visited=1)
"""

import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Tuple, Optional, Iterator, NamedTuple, Sequence

from evorl.constants import DFLT_MAX_DEPTH, DFLT_MAX_NODES, DFLT_REPEAT_CAP
from evorl.util import InvalidArgument


class Signal(Enum):
    SUCCESS = 'success'
    FAILURE = 'failure'
    RUNNING = 'running'


class NodeKind(Enum):
    """The kinds of nodes, valued by their S-expression head"""

    SELECTOR = 'sel'
    SEQUENCE = 'seq'
    PARALLEL_SELECTOR = 'psel'
    PARALLEL_SEQUENCE = 'pseq'
    INVERT = 'inv'
    REPEAT = 'rep'
    REPEAT_UNTIL_FAIL = 'ruf'
    CONDITION = 'cond'
    ACTION = 'act'


composite_kinds = frozenset(
    {
        NodeKind.SELECTOR,
        NodeKind.SEQUENCE,
        NodeKind.PARALLEL_SELECTOR,
        NodeKind.PARALLEL_SEQUENCE,
    }
)
decorator_kinds = frozenset(
    {NodeKind.INVERT, NodeKind.REPEAT, NodeKind.REPEAT_UNTIL_FAIL}
)
leaf_kinds = frozenset({NodeKind.CONDITION, NodeKind.ACTION})
comparators = ('<', '>=')


@dataclass(frozen=True)
class BTNode:
    """A behavior tree node (and the tree it roots).

    Which of ``feature``, ``comparator``, ``threshold``, ``action`` and ``repeat``
    are used depends on ``kind``. Use the ``sel``, ``seq``, ``cond``, ``act``...
    constructors rather than this class directly.
    """

    kind: NodeKind
    children: Tuple['BTNode', ...] = ()
    feature: Optional[int] = None
    comparator: Optional[str] = None
    threshold: Optional[float] = None
    action: Optional[int] = None
    repeat: Optional[int] = None

    @property
    def is_leaf(self) -> bool:
        return self.kind in leaf_kinds

    def with_children(self, children: Sequence['BTNode']) -> 'BTNode':
        return replace(self, children=tuple(children))

    def __str__(self):
        return to_sexpr(self)


BehaviorTree = BTNode


def sel(*children: BTNode) -> BTNode:
    return BTNode(NodeKind.SELECTOR, children)


def seq(*children: BTNode) -> BTNode:
    return BTNode(NodeKind.SEQUENCE, children)


def psel(*children: BTNode) -> BTNode:
    return BTNode(NodeKind.PARALLEL_SELECTOR, children)


def pseq(*children: BTNode) -> BTNode:
    return BTNode(NodeKind.PARALLEL_SEQUENCE, children)


def inv(child: BTNode) -> BTNode:
    return BTNode(NodeKind.INVERT, (child,))


def rep(n: int, child: BTNode) -> BTNode:
    return BTNode(NodeKind.REPEAT, (child,), repeat=int(n))


def ruf(child: BTNode) -> BTNode:
    return BTNode(NodeKind.REPEAT_UNTIL_FAIL, (child,))


def cond(feature: int, comparator: str, threshold: float) -> BTNode:
    return BTNode(
        NodeKind.CONDITION,
        feature=int(feature),
        comparator=comparator,
        threshold=float(threshold),
    )


def act(action: int) -> BTNode:
    return BTNode(NodeKind.ACTION, action=int(action))


# --------------------------------------------------------------------------------------
# Structure


def depth(tree: BTNode) -> int:
    """Number of nodes on the longest root-to-leaf path (a leaf has depth 1).

    >>> depth(act(0)), depth(sel(act(0), inv(cond(0, '<', 0.0))))
    (1, 3)
    """
    if not tree.children:
        return 1
    return 1 + max(depth(c) for c in tree.children)


def size(tree: BTNode) -> int:
    return 1 + sum(size(c) for c in tree.children)


Path = Tuple[int, ...]


def iter_paths(tree: BTNode, path: Path = ()) -> Iterator[Tuple[Path, BTNode]]:
    """Yield the ``(path, node)`` pairs of a tree, in depth-first (pre) order.

    >>> [p for p, _ in iter_paths(sel(act(0), inv(act(1))))]
    [(), (0,), (1,), (1, 0)]
    """
    yield path, tree
    for i, child in enumerate(tree.children):
        yield from iter_paths(child, path + (i,))


def subtree_at(tree: BTNode, path: Path) -> BTNode:
    for i in path:
        tree = tree.children[i]
    return tree


def replace_at(tree: BTNode, path: Path, subtree: BTNode) -> BTNode:
    """A copy of ``tree`` where the node at ``path`` is replaced by ``subtree``"""
    if not path:
        return subtree
    i, *rest = path
    children = list(tree.children)
    children[i] = replace_at(children[i], tuple(rest), subtree)
    return tree.with_children(children)


def validate_tree(
    tree: BTNode,
    *,
    state_dim: Optional[int] = None,
    action_count: Optional[int] = None,
    max_depth: Optional[int] = DFLT_MAX_DEPTH,
    max_nodes: Optional[int] = DFLT_MAX_NODES,
) -> BTNode:
    """Return the tree if it is well formed, raise ``InvalidArgument`` if not.

    >>> validate_tree(sel())
    Traceback (most recent call last):
      ...
    evorl.util.InvalidArgument: sel needs at least one child
    """
    for _, node in iter_paths(tree):
        _validate_node(node, state_dim, action_count)
    if max_depth is not None and depth(tree) > max_depth:
        raise InvalidArgument(f'Tree depth {depth(tree)} exceeds {max_depth}')
    if max_nodes is not None and size(tree) > max_nodes:
        raise InvalidArgument(f'Tree has {size(tree)} nodes, more than {max_nodes}')
    return tree


def _validate_node(node, state_dim=None, action_count=None):
    kind = node.kind
    name = kind.value if isinstance(kind, NodeKind) else repr(kind)
    if kind in composite_kinds:
        if len(node.children) < 1:
            raise InvalidArgument(f'{name} needs at least one child')
    elif kind in decorator_kinds:
        if len(node.children) != 1:
            raise InvalidArgument(f'{name} needs exactly one child')
        if kind is NodeKind.REPEAT and not (
            isinstance(node.repeat, int) and node.repeat >= 1
        ):
            raise InvalidArgument(f'rep needs a positive count, not {node.repeat!r}')
    elif kind is NodeKind.CONDITION:
        if node.children:
            raise InvalidArgument('cond nodes are leaves')
        if node.comparator not in comparators:
            raise InvalidArgument(f'Unknown comparator: {node.comparator!r}')
        if not isinstance(node.feature, int) or node.feature < 0:
            raise InvalidArgument(f'Invalid feature index: {node.feature!r}')
        if state_dim is not None and node.feature >= state_dim:
            raise InvalidArgument(f'Feature {node.feature} >= state_dim {state_dim}')
        if not (isinstance(node.threshold, float) and math.isfinite(node.threshold)):
            raise InvalidArgument(f'Invalid threshold: {node.threshold!r}')
    elif kind is NodeKind.ACTION:
        if node.children:
            raise InvalidArgument('act nodes are leaves')
        if not isinstance(node.action, int) or node.action < 0:
            raise InvalidArgument(f'Invalid action: {node.action!r}')
        if action_count is not None and node.action >= action_count:
            raise InvalidArgument(f'Action {node.action} >= action_count {action_count}')
    else:
        raise InvalidArgument(f'Unknown node kind: {name}')


# --------------------------------------------------------------------------------------
# Ticking


class TickResult(NamedTuple):
    signal: Signal
    chosen_action: Optional[int]
    nodes_visited: int


class _Tick:
    """The state of one tick: the observation, the chosen action and a visit count"""

    __slots__ = ('obs', 'chosen_action', 'nodes_visited', 'repeat_cap')

    def __init__(self, obs, repeat_cap):
        self.obs = obs
        self.chosen_action = None
        self.nodes_visited = 0
        self.repeat_cap = repeat_cap

    def __call__(self, node: BTNode) -> Signal:
        self.nodes_visited += 1
        kind = node.kind
        children = node.children

        if kind is NodeKind.CONDITION:
            _validate_node(node, state_dim=len(self.obs))
            v = self.obs[node.feature]
            if node.comparator == '<':
                holds = v < node.threshold
            else:
                holds = v >= node.threshold
            return Signal.SUCCESS if holds else Signal.FAILURE

        _validate_node(node)

        if kind is NodeKind.ACTION:
            self.chosen_action = node.action
            return Signal.SUCCESS

        if kind is NodeKind.SELECTOR:
            for child in children:
                s = self(child)
                if self.chosen_action is not None:
                    return Signal.SUCCESS
                if s is not Signal.FAILURE:
                    return s
            return Signal.FAILURE

        if kind is NodeKind.SEQUENCE:
            for child in children:
                s = self(child)
                if self.chosen_action is not None:
                    return Signal.SUCCESS
                if s is not Signal.SUCCESS:
                    return s
            return Signal.SUCCESS

        if kind is NodeKind.INVERT:
            s = self(children[0])
            if self.chosen_action is not None:
                return Signal.SUCCESS
            if s is Signal.SUCCESS:
                return Signal.FAILURE
            if s is Signal.FAILURE:
                return Signal.SUCCESS
            return s

        if kind is NodeKind.REPEAT:
            s = Signal.SUCCESS
            for _ in range(min(node.repeat, self.repeat_cap)):
                s = self(children[0])
                if self.chosen_action is not None:
                    return Signal.SUCCESS
            return s

        if kind is NodeKind.REPEAT_UNTIL_FAIL:
            s = Signal.SUCCESS
            for _ in range(self.repeat_cap):
                s = self(children[0])
                if self.chosen_action is not None:
                    return Signal.SUCCESS
                if s is Signal.FAILURE:
                    return Signal.SUCCESS
            return s

        # parallel nodes: children are ticked in order within the same step
        signals = []
        for child in children:
            signals.append(self(child))
            if self.chosen_action is not None:
                return Signal.SUCCESS
        if kind is NodeKind.PARALLEL_SEQUENCE:
            if Signal.FAILURE in signals:
                return Signal.FAILURE
            if all(s is Signal.SUCCESS for s in signals):
                return Signal.SUCCESS
            return Signal.RUNNING
        # PARALLEL_SELECTOR
        if Signal.SUCCESS in signals:
            return Signal.SUCCESS
        if all(s is Signal.FAILURE for s in signals):
            return Signal.FAILURE
        return Signal.RUNNING


def tick(
    tree: BTNode, obs: Sequence[float], *, repeat_cap: int = DFLT_REPEAT_CAP
) -> TickResult:
    """Tick the tree on an observation.

    >>> tick(act(1), (0.3,))
    TickResult(signal=<Signal.SUCCESS: 'success'>, chosen_action=1, nodes_visited=1)

    The selector stops at its first successful child, so here no action is chosen:

    >>> tick(sel(cond(0, '<', 0.0), act(0)), (-1.0,)).chosen_action is None
    True
    """
    t = _Tick(obs, repeat_cap)
    signal = t(tree)
    return TickResult(signal, t.chosen_action, t.nodes_visited)


# --------------------------------------------------------------------------------------
# S-expressions


def to_sexpr(tree: BTNode) -> str:
    """The canonical S-expression of a tree (thresholds in shortest round-trip form).

    >>> to_sexpr(rep(3, inv(cond(1, '<', -0.5))))
    '(rep 3 (inv (cond 1 < -0.5)))'
    """
    kind = tree.kind
    if kind is NodeKind.CONDITION:
        return f'(cond {tree.feature} {tree.comparator} {tree.threshold!r})'
    if kind is NodeKind.ACTION:
        return f'(act {tree.action})'
    args = [to_sexpr(c) for c in tree.children]
    if kind is NodeKind.REPEAT:
        args.insert(0, str(tree.repeat))
    return '(' + ' '.join([kind.value, *args]) + ')'


_token_p = re.compile(r'\(|\)|[^\s()]+')


def parse_tree(sexpr: str) -> BTNode:
    """Parse the S-expression of a tree (the inverse of ``to_sexpr``).

    >>> s = '(pseq (ruf (act 2)) (psel (cond 0 >= 1e-05) (act 0)))'
    >>> to_sexpr(parse_tree(s)) == s
    True
    """
    tokens = _token_p.findall(sexpr)
    if not tokens:
        raise InvalidArgument('Empty tree expression')
    tree, pos = _parse(tokens, 0)
    if pos != len(tokens):
        raise InvalidArgument(f'Trailing tokens in tree expression: {tokens[pos:]}')
    return validate_tree(tree, max_depth=None, max_nodes=None)


def _parse(tokens, pos):
    if tokens[pos] != '(':
        raise InvalidArgument(f'Expected "(" at token {pos}, got {tokens[pos]!r}')
    try:
        head = tokens[pos + 1]
        kind = NodeKind(head)
    except IndexError:
        raise InvalidArgument('Unexpected end of tree expression')
    except ValueError:
        raise InvalidArgument(f'Unknown node kind: {head!r}')
    pos += 2
    try:
        if kind is NodeKind.CONDITION:
            feature, comparator, threshold, close = tokens[pos : pos + 4]
            node = cond(int(feature), comparator, float(threshold))
            pos += 3
        elif kind is NodeKind.ACTION:
            action, close = tokens[pos : pos + 2]
            node = act(int(action))
            pos += 1
        else:
            repeat = None
            if kind is NodeKind.REPEAT:
                repeat = int(tokens[pos])
                pos += 1
            children = []
            while tokens[pos] != ')':
                child, pos = _parse(tokens, pos)
                children.append(child)
            node = BTNode(kind, tuple(children), repeat=repeat)
    except (ValueError, IndexError):
        raise InvalidArgument(f'Malformed {kind.value} node in tree expression')
    if pos >= len(tokens) or tokens[pos] != ')':
        raise InvalidArgument(f'Expected ")" closing {kind.value} node')
    return node, pos + 1
