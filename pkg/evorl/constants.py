"""A place to put constants, defaults, types..."""

from typing import Literal, Tuple, Dict

APP_NAME = 'evorl'

# --------------------------------------------------------------------------- #
# Names

EnvName = Literal['cartpole', 'acrobot', 'mountaincar']
Mode = Literal['evo-rl', 'ea-only', 'rl-only']
Algo = Literal['q', 'dqn', 'ppo']

env_names: Tuple[str, ...] = ('cartpole', 'acrobot', 'mountaincar')
modes: Tuple[str, ...] = ('evo-rl', 'ea-only', 'rl-only')
implemented_algos: Tuple[str, ...] = ('q', 'dqn')

# Fractions of rewardless bins the experiments are run with
tested_fractions: Tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
MAX_REWARDLESS_FRACTION = 0.5

# Column labels used in comparison tables, keyed by (mode, algo)
ALGO_LABELS: Dict[Tuple[str, str], str] = {
    ('evo-rl', 'q'): 'eQ-learning',
    ('evo-rl', 'dqn'): 'eDQN',
    ('rl-only', 'q'): 'Q-learning',
    ('rl-only', 'dqn'): 'DQN',
    ('ea-only', 'q'): 'EA-Only',
    ('ea-only', 'dqn'): 'EA-Only',
}

# --------------------------------------------------------------------------- #
# Budget and life cycle defaults

DFLT_BUDGET = 60_000
DFLT_INFANCY_EPISODES = 10
DFLT_EVAL_EPISODES = 100
DFLT_RL_EVAL_INTERVAL = 300
DFLT_RL_DECAY_EPISODES = 1_000
DFLT_TRIALS = 10
DFLT_SEED = 0
MASTER_SEED_ENVIRON_NAME = 'EVORL_SEED'

# --------------------------------------------------------------------------- #
# Behavior tree defaults

DFLT_MAX_DEPTH = 6
DFLT_MAX_NODES = 64
DFLT_REPEAT_CAP = 16

# --------------------------------------------------------------------------- #
# Random stream purposes (the last component of a stream key)

STREAM_PURPOSES: Dict[str, int] = {
    'init': 0,
    'infancy': 1,
    'learner': 2,
    'eval': 3,
    'conception': 4,
    'mask': 5,
    'trial': 6,
}

# --------------------------------------------------------------------------- #
# File formats

SUMMARY_SCHEMA_VERSION = 1
SUMMARY_FILENAME = 'summary.json'
TABLE_ROW_FILENAME = 'table_row.txt'
MASK_FILENAME = 'mask.json'
INCOMPLETE_MARKER = 'INCOMPLETE'
CONVERGENCE_COLUMNS = (
    'generation',
    'evaluations',
    'best_fitness',
    'mean_fitness',
    'instinct_ratio',
    'solved',
)
RL_CONVERGENCE_COLUMNS = ('eval_point',) + CONVERGENCE_COLUMNS[1:]

# Format of a table cell; the fields are those of a TrialSummary
DFLT_CELL_TEMPLATE = '{mean:.1f} ±{sem:.1f}'
DFLT_SOLVED_AT_TEMPLATE = ' @ {solved_at:,}'
