r"""
Evolutionary-driven reinforcement learning.

Agents have an *instinct*, a behavior tree that is evolved by genetic programming,
and a *learned behavior* (a Q-table or a Q-network) that a reinforcement learner
builds during the agent's infancy. Whenever the instinct's tree reaches an action,
that action is taken and nothing is learned from the step; otherwise the learner
decides. Offspring inherit the average of their parents' learned behaviors.

The environments are classic control problems (``cartpole``, ``acrobot``,
``mountaincar``) in which a fraction of the (binned) state space is *rewardless*:
no reward is given to the learner for steps taken from there.


# Example usage

## Environments with rewardless states

>>> from evorl import make_masked_env
>>> import numpy as np
>>> env = make_masked_env('cartpole', fraction=0.3, seed=1)
>>> len(env.mask.masked), env.grid.total_bins
(76, 256)
>>> obs = env.reset(np.random.default_rng(0))
>>> outcome = env.step(1)
>>> outcome.reward in (None, 1.0)
True

## Behavior trees

>>> from evorl import parse_tree, tick
>>> tree = parse_tree('(sel (seq (cond 2 < 0.0) (act 0)) (act 1))')
>>> tick(tree, (0.0, 0.0, -0.05, 0.0)).chosen_action
0
>>> tick(tree, (0.0, 0.0, 0.05, 0.0)).chosen_action
1

## Runs

A run yields one record per generation:

>>> from evorl import RunConfig, run_evo_rl
>>> cfg = RunConfig(
...     env='cartpole', budget=16, infancy_episodes=2, eval_episodes=2,
...     gp={'population_size': 4, 'generations': 3, 'tournament_k': 2},
... )
>>> records = list(run_evo_rl(cfg))
>>> records[0].evaluations  # 4 agents x 2 episodes
8
>>> len(records) <= 2  # the budget covers two generations
True

Suites of trials are run (and written to a directory) with ``run_suite``, and
summarized in comparison tables with ``report``. The same is available from the
command line: ``evorl run``, ``evorl report`` and ``evorl show-mask``.
"""

from evorl.util import (
    EvoRLError,
    InvalidArgument,
    ConfigError,
    ProtocolViolation,
    NumericFault,
    SchemaError,
    BudgetExhausted,
    derive_rng,
    get_preset,
)
from evorl.envs import make_env, get_env_spec, EnvSpec, ControlEnv
from evorl.masking import (
    BinGrid,
    MaskedEnv,
    RewardlessMask,
    bin_index,
    build_mask,
    grid_for,
    make_masked_env,
)
from evorl.behavior_tree import BTNode, Signal, NodeKind, tick, parse_tree, to_sexpr
from evorl.gp import GPConfig
from evorl.learners import (
    QTable,
    MLPParams,
    QConfig,
    DQNConfig,
    merge_learned,
    serialize_learned,
    deserialize_learned,
    make_learner,
)
from evorl.engine import (
    Agent,
    RunRecord,
    BudgetLedger,
    run_evo_rl,
    run_ea_only,
    run_rl_only,
    random_policy_baseline,
)
from evorl.harness import RunConfig, load_run_config, run_suite, report, sem
from evorl.stores import checkpoint_store
