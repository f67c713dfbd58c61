"""Run configuration, multi-trial suites, statistics and reporting.

A suite is ``trials`` runs of one configuration, each with its own seed derived from
the master seed. Its directory gets:

- ``trial_XX.csv``: the convergence records of each trial
- ``summary.json``: the configuration, per-trial results and aggregates
- ``table_row.txt``: the formatted comparison-table cell (``mean ±sem @ solved_at``)
- ``mask.json``: the rewardless mask the trials were run with

``report`` aggregates the summaries of several suites into a comparison table.

>>> sem([5, 5, 5, 5])
0.0
>>> sem([0, 2])
1.0
"""

import os
import json
import math
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, asdict, replace
from itertools import repeat
from typing import Optional, List, Tuple, Iterable, Mapping, NamedTuple, Sequence
from warnings import warn

import numpy as np
import pandas as pd
from lkj import fields_of_string_formats

from evorl.constants import (
    ALGO_LABELS,
    CONVERGENCE_COLUMNS,
    RL_CONVERGENCE_COLUMNS,
    DFLT_BUDGET,
    DFLT_CELL_TEMPLATE,
    DFLT_EVAL_EPISODES,
    DFLT_INFANCY_EPISODES,
    DFLT_REPEAT_CAP,
    DFLT_RL_DECAY_EPISODES,
    DFLT_RL_EVAL_INTERVAL,
    DFLT_SEED,
    DFLT_SOLVED_AT_TEMPLATE,
    DFLT_TRIALS,
    INCOMPLETE_MARKER,
    MASK_FILENAME,
    MAX_REWARDLESS_FRACTION,
    SUMMARY_FILENAME,
    SUMMARY_SCHEMA_VERSION,
    TABLE_ROW_FILENAME,
    env_names,
    implemented_algos,
    modes,
    tested_fractions,
)
from evorl.engine import BudgetLedger, RunRecord, run, run_context
from evorl.gp import GPConfig
from evorl.learners import learner_config
from evorl.stores import SuiteSummaries, artifact_store, json_store, is_incomplete
from evorl.util import (
    ConfigError,
    InvalidArgument,
    derive_seed,
    get_preset,
    master_seed_override,
)

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------------------
# Configuration


@dataclass
class RunConfig:
    """Everything that defines a suite of runs.

    ``gp`` and ``learner`` hold the genetic programming config and the overrides of
    the learner's config. ``workers``, ``parallel_trials`` and ``out`` only affect
    where and how fast things are computed, not the results.
    """

    env: str = 'cartpole'
    mode: str = 'evo-rl'
    algo: str = 'q'
    fraction: float = 0.0
    trials: int = DFLT_TRIALS
    seed: int = DFLT_SEED
    budget: int = DFLT_BUDGET
    gp: GPConfig = field(default_factory=GPConfig)
    learner: dict = field(default_factory=dict)
    infancy_episodes: int = DFLT_INFANCY_EPISODES
    eval_episodes: int = DFLT_EVAL_EPISODES
    eval_interval: int = DFLT_RL_EVAL_INTERVAL
    rl_decay_episodes: int = DFLT_RL_DECAY_EPISODES
    instinct_ratio_phase: str = 'eval'
    bins_per_dim: Optional[Tuple[int, ...]] = None
    mask_seed: Optional[int] = None
    repeat_cap: int = DFLT_REPEAT_CAP
    allow_any_fraction: bool = False
    population_stddev: bool = False
    workers: int = 1
    parallel_trials: int = 1
    out: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.gp, Mapping):
            self.gp = GPConfig.from_dict(self.gp)
        if self.bins_per_dim is not None:
            self.bins_per_dim = tuple(self.bins_per_dim)
        self.learner = dict(self.learner or {})

    @classmethod
    def from_dict(cls, d: Mapping) -> 'RunConfig':
        known = {f.name for f in fields(cls)}
        if unknown := set(d) - known:
            raise ConfigError(f'Unknown config keys: {sorted(unknown)}')
        return cls(**d)

    def learner_config(self):
        return learner_config(self.algo, self.learner)

    def validate(self) -> 'RunConfig':
        """Raise a ``ConfigError`` if the config can't be run"""
        if self.env not in env_names:
            raise ConfigError(f'Unknown env: {self.env!r}. Known: {env_names}')
        if self.mode not in modes:
            raise ConfigError(f'Unknown mode: {self.mode!r}. Known: {modes}')
        if self.algo not in implemented_algos:
            if self.algo == 'ppo':
                raise ConfigError("algo='ppo' is not implemented")
            raise ConfigError(f'Unknown algo: {self.algo!r}. Known: {implemented_algos}')
        self.learner_config()
        if not 0.0 <= self.fraction <= MAX_REWARDLESS_FRACTION:
            raise ConfigError(
                f'fraction must be in [0, {MAX_REWARDLESS_FRACTION}]: {self.fraction}'
            )
        if not self.allow_any_fraction and self.fraction not in tested_fractions:
            raise ConfigError(
                f'fraction {self.fraction} is not one of {tested_fractions} '
                '(use allow_any_fraction to run it anyway)'
            )
        for name in (
            'trials',
            'infancy_episodes',
            'eval_episodes',
            'eval_interval',
            'repeat_cap',
            'workers',
            'parallel_trials',
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f'{name} must be positive: {getattr(self, name)}')
        if self.seed < 0 or self.budget < 0 or self.rl_decay_episodes < 0:
            raise ConfigError('seed, budget and rl_decay_episodes must be non-negative')
        if self.instinct_ratio_phase not in ('eval', 'infancy'):
            raise ConfigError(
                "instinct_ratio_phase must be 'eval' or 'infancy', "
                f'not {self.instinct_ratio_phase!r}'
            )
        return self

    @property
    def label(self) -> str:
        return ALGO_LABELS[(self.mode, self.algo)]

    def to_jdict(self) -> dict:
        """The config fields that determine results, json-ready"""
        d = asdict(self)
        for name in ('workers', 'parallel_trials', 'out'):
            d.pop(name)
        d['gp']['init_depth_range'] = list(d['gp']['init_depth_range'])
        if d['bins_per_dim'] is not None:
            d['bins_per_dim'] = list(d['bins_per_dim'])
        return d

    def suite_mask_seed(self) -> int:
        if self.mask_seed is not None:
            return self.mask_seed
        return derive_seed(self.seed, 0, 0, 'mask')

    def trial_config(self, trial: int) -> 'RunConfig':
        """The config of one trial: its own seed, the suite's mask"""
        return replace(
            self,
            seed=trial_seed(self.seed, trial),
            mask_seed=self.suite_mask_seed(),
            trials=1,
        )


def trial_seed(master_seed: int, trial: int) -> int:
    return derive_seed(master_seed, trial, 0, 'trial')


def _merged(base: dict, overrides: Mapping) -> dict:
    """``base`` updated with ``overrides``, the nested ``gp`` and ``learner`` dicts
    being updated rather than replaced.

    >>> _merged({'trials': 5, 'gp': {'generations': 60}}, {'gp': {'elitism': 2}})
    {'trials': 5, 'gp': {'generations': 60, 'elitism': 2}}
    """
    merged = dict(base)
    for k, v in overrides.items():
        if k in ('gp', 'learner') and isinstance(merged.get(k), Mapping):
            merged[k] = {**merged[k], **v}
        else:
            merged[k] = v
    return merged


def load_run_config(
    config_file: Optional[str] = None,
    *,
    preset: Optional[str] = None,
    overrides: Optional[Mapping] = None,
    environ: Mapping = os.environ,
) -> RunConfig:
    """Resolve a run config from (in increasing precedence) the defaults, a named
    preset, a json config file, the ``EVORL_SEED`` environment variable and explicit
    ``overrides`` (those that aren't ``None``).

    A config file may name a ``preset`` of its own, which ``preset`` overrides.

    >>> cfg = load_run_config(preset='desk', overrides={'fraction': 0.3}, environ={})
    >>> cfg.trials, cfg.budget, cfg.gp.generations, cfg.fraction
    (5, 18000, 60, 0.3)
    """
    file_dict = {}
    if config_file is not None:
        try:
            with open(config_file) as fp:
                file_dict = json.load(fp)
        except OSError as e:
            raise ConfigError(f'Cannot read config file {config_file}: {e}')
        except ValueError as e:
            raise ConfigError(f'{config_file} is not valid json: {e}')
        if not isinstance(file_dict, dict):
            raise ConfigError(f'{config_file} should contain a json object')
    preset = preset or file_dict.pop('preset', None)
    file_dict.pop('preset', None)
    d = get_preset(preset) if preset else {}
    d = _merged(d, file_dict)
    if (seed := master_seed_override(environ)) is not None:
        d['seed'] = seed
    d = _merged(d, {k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(d).validate()


# --------------------------------------------------------------------------------------
# Statistics


def sem(values: Sequence[float], *, population_stddev: bool = False) -> float:
    """Standard error of the mean: the standard deviation over ``sqrt(N)``.

    The sample standard deviation (``N - 1`` denominator) is used unless
    ``population_stddev``. A single value has no error.

    >>> round(sem([1.0, 2.0, 3.0, 4.0]), 6)
    0.645497
    >>> round(sem([1.0, 2.0, 3.0, 4.0], population_stddev=True), 6)
    0.559017
    >>> sem([3.5])
    0.0
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        raise InvalidArgument('sem of an empty list of values')
    if n == 1:
        return 0.0
    ddof = 0 if population_stddev else 1
    return float(np.std(values, ddof=ddof) / math.sqrt(n))


def median_solved_at(solved_at: Sequence[Optional[int]]) -> Optional[int]:
    """The median budget consumption at which trials were solved, unsolved trials
    counting as never; ``None`` if the median trial didn't solve.

    >>> median_solved_at([100, None, 300])
    300
    >>> median_solved_at([100, None, None]) is None
    True
    >>> median_solved_at([100, 200, 400, None])
    300
    """
    if not solved_at:
        return None
    ordered = sorted(math.inf if s is None else s for s in solved_at)
    n = len(ordered)
    mid = ordered[n // 2] if n % 2 else (ordered[n // 2 - 1] + ordered[n // 2]) / 2
    return None if mid == math.inf else int(round(mid))


cell_fields = frozenset(
    {'mean', 'sem', 'solved_at', 'solved_trials', 'trials', 'instinct_ratio'}
)


def validate_cell_templates(*templates: str) -> None:
    """
    >>> validate_cell_templates('{mean:.1f} ±{sem:.1f}', ' @ {solved_at:,}')
    >>> validate_cell_templates('{mean} ({median})')
    Traceback (most recent call last):
      ...
    evorl.util.ConfigError: Unknown cell template fields: ['median']
    """
    used = set(filter(None, fields_of_string_formats(templates)))
    if unknown := used - cell_fields:
        raise ConfigError(f'Unknown cell template fields: {sorted(unknown)}')


class TrialResult(NamedTuple):
    trial: int
    seed: int
    records: List[RunRecord]
    consumed: int
    solved_at: Optional[int]
    mode: str = 'evo-rl'

    @property
    def final_reward(self) -> float:
        """The reward after the last evaluation: the best agent's fitness for
        evolutionary runs, the last evaluation mean for RL-only runs"""
        last = self.records[-1]
        return last.mean_fitness if self.mode == 'rl-only' else last.best_fitness

    @property
    def instinct_ratio(self) -> float:
        return self.records[-1].instinct_ratio


@dataclass
class TrialSummary:
    """The aggregate of the trials of a suite"""

    final_rewards: List[float]
    solved_at: List[Optional[int]]
    instinct_ratios: List[float]
    mean: float
    sem: float
    solved_trials: int

    @classmethod
    def of_trials(
        cls, results: Iterable[TrialResult], *, population_stddev: bool = False
    ) -> 'TrialSummary':
        results = list(results)
        rewards = [r.final_reward for r in results]
        solved_at = [r.solved_at for r in results]
        return cls(
            final_rewards=rewards,
            solved_at=solved_at,
            instinct_ratios=[r.instinct_ratio for r in results],
            mean=float(np.mean(rewards)),
            sem=sem(rewards, population_stddev=population_stddev),
            solved_trials=sum(s is not None for s in solved_at),
        )

    @property
    def trials(self) -> int:
        return len(self.final_rewards)

    @property
    def median_solved_at(self) -> Optional[int]:
        return median_solved_at(self.solved_at)

    @property
    def mean_instinct_ratio(self) -> float:
        return float(np.mean(self.instinct_ratios))

    def cell(
        self,
        template: str = DFLT_CELL_TEMPLATE,
        solved_at_template: str = DFLT_SOLVED_AT_TEMPLATE,
    ) -> str:
        """The comparison-table cell of the suite.

        >>> TrialSummary([196.0, 196.6], [9000, 12600], [0.4, 0.5], 196.3, 0.3, 2).cell()
        '196.3 ±0.3 @ 10,800'
        """
        return format_cell(
            {
                'mean': self.mean,
                'sem': self.sem,
                'solved_at': self.median_solved_at,
                'solved_trials': self.solved_trials,
                'trials': self.trials,
                'instinct_ratio': self.mean_instinct_ratio,
            },
            template,
            solved_at_template,
        )


def format_cell(
    values: Mapping,
    template: str = DFLT_CELL_TEMPLATE,
    solved_at_template: str = DFLT_SOLVED_AT_TEMPLATE,
) -> str:
    cell = template.format(**values)
    if values.get('solved_at') is not None:
        cell += solved_at_template.format(**values)
    return cell


# --------------------------------------------------------------------------------------
# Suites


def convergence_frame(records: Sequence[RunRecord], mode: str) -> pd.DataFrame:
    """The convergence records of a run as a table (RL-only runs are indexed by
    evaluation point instead of generation)"""
    columns = RL_CONVERGENCE_COLUMNS if mode == 'rl-only' else CONVERGENCE_COLUMNS
    return pd.DataFrame([r.to_row() for r in records], columns=list(columns))


def ledger_for(cfg: RunConfig) -> BudgetLedger:
    unit = 'individuals' if cfg.mode == 'ea-only' else 'episodes'
    return BudgetLedger(unit, cfg.budget)


def run_trial(cfg: RunConfig, trial: int) -> TrialResult:
    """Run trial number ``trial`` of the suite of ``cfg``"""
    trial_cfg = cfg.trial_config(trial)
    ledger = ledger_for(trial_cfg)
    logger.info(f'{cfg.label} {cfg.env} {cfg.fraction:.0%}: trial {trial} starting')
    records = list(run(trial_cfg, ledger=ledger))
    if not records:
        raise ConfigError(
            f'Trial {trial} produced no records: the budget ({cfg.budget}) or '
            'generation count is too small for a single generation'
        )
    return TrialResult(
        trial, trial_cfg.seed, records, ledger.consumed, ledger.solved_at, cfg.mode
    )


def _run_trials(cfg: RunConfig) -> List[TrialResult]:
    trials = range(cfg.trials)
    if cfg.parallel_trials <= 1:
        return [run_trial(cfg, t) for t in trials]
    # a trial's worker can't spawn a pool of its own
    cfg = replace(cfg, workers=1)
    with ProcessPoolExecutor(max_workers=cfg.parallel_trials) as executor:
        return list(executor.map(run_trial, repeat(cfg), trials))


def summary_jdict(cfg: RunConfig, results: List[TrialResult]) -> dict:
    summary = TrialSummary.of_trials(results, population_stddev=cfg.population_stddev)
    return {
        'schema_version': SUMMARY_SCHEMA_VERSION,
        'config': cfg.to_jdict(),
        'env': cfg.env,
        'mode': cfg.mode,
        'algo': cfg.algo,
        'label': cfg.label,
        'fraction': cfg.fraction,
        'trials': [
            {
                'trial': r.trial,
                'seed': r.seed,
                'final_reward': r.final_reward,
                'solved_at': r.solved_at,
                'instinct_ratio': r.instinct_ratio,
                'consumed': r.consumed,
            }
            for r in results
        ],
        'mean': summary.mean,
        'sem': summary.sem,
        'solved_trials': summary.solved_trials,
        'median_solved_at': summary.median_solved_at,
        'mean_instinct_ratio': summary.mean_instinct_ratio,
        'cell': summary.cell(),
    }


def run_suite(cfg: RunConfig) -> TrialSummary:
    """Run the trials of ``cfg`` and write their artifacts to ``cfg.out``.

    An ``INCOMPLETE`` marker file is present in the directory until every artifact
    is written.
    """
    cfg.validate()
    if cfg.out is None:
        raise ConfigError('An output directory is needed to run a suite')
    files = artifact_store(cfg.out)
    files[INCOMPLETE_MARKER] = 'This suite was interrupted or is still running.\n'
    results = _run_trials(cfg)
    for r in results:
        frame = convergence_frame(r.records, cfg.mode)
        files[f'trial_{r.trial:02d}.csv'] = frame.to_csv(index=False)
    summary = summary_jdict(cfg, results)
    jsons = json_store(cfg.out)
    ctx = run_context(cfg.trial_config(0))
    jsons[MASK_FILENAME] = ctx.mask.to_jdict(cfg.env, ctx.grid)
    jsons[SUMMARY_FILENAME] = summary
    files[TABLE_ROW_FILENAME] = (
        f"{summary['env']}\t{cfg.fraction:.0%}\t{summary['label']}\t{summary['cell']}\n"
    )
    del files[INCOMPLETE_MARKER]
    logger.info(f"{cfg.label} {cfg.env} {cfg.fraction:.0%}: {summary['cell']}")
    return TrialSummary.of_trials(results, population_stddev=cfg.population_stddev)


# --------------------------------------------------------------------------------------
# Reports

label_order = ('eQ-learning', 'eDQN', 'Q-learning', 'DQN', 'EA-Only')


def _complete_summaries(dirs: Iterable[str]):
    summaries = SuiteSummaries(dirs)
    for d in summaries:
        if is_incomplete(d):
            warn(f'Skipping incomplete suite: {d}', UserWarning)
            continue
        try:
            yield summaries[d]
        except KeyError:
            raise InvalidArgument(f'Not a suite directory (no {SUMMARY_FILENAME}): {d}')


def _summary_cell(summary: dict, template, solved_at_template) -> str:
    return format_cell(
        {
            'mean': summary['mean'],
            'sem': summary['sem'],
            'solved_at': summary['median_solved_at'],
            'solved_trials': summary['solved_trials'],
            'trials': len(summary['trials']),
            'instinct_ratio': summary['mean_instinct_ratio'],
        },
        template,
        solved_at_template,
    )


def summaries_frame(dirs: Iterable[str]) -> pd.DataFrame:
    """One row per suite: env, fraction, label and aggregates"""
    rows = [
        {
            'env': s['env'],
            'fraction': s['fraction'],
            'label': s['label'],
            'mean': s['mean'],
            'sem': s['sem'],
            'median_solved_at': s['median_solved_at'],
            'solved_trials': s['solved_trials'],
            'trials': len(s['trials']),
            'mean_instinct_ratio': s['mean_instinct_ratio'],
            '_summary': s,
        }
        for s in _complete_summaries(dirs)
    ]
    if not rows:
        raise InvalidArgument('No complete suite summaries to report on')
    return pd.DataFrame(rows)


def _sorted_table(table: pd.DataFrame) -> pd.DataFrame:
    env_rank = {e: i for i, e in enumerate(env_names)}
    table = table.sort_index(
        key=lambda idx: idx.map(env_rank) if idx.name == 'env' else idx
    )
    columns = [c for c in label_order if c in table.columns]
    columns += sorted(c for c in table.columns if c not in label_order)
    return table[columns]


def report(
    dirs: Iterable[str],
    *,
    template: str = DFLT_CELL_TEMPLATE,
    solved_at_template: str = DFLT_SOLVED_AT_TEMPLATE,
) -> pd.DataFrame:
    """The comparison table of suites: a row per (env, fraction), a column per
    algorithm label, cells like ``196.3 ±0.3 @ 10,800`` (the ``@`` part only when the
    median trial solved the env)."""
    validate_cell_templates(template, solved_at_template)
    df = summaries_frame(dirs)
    if df.duplicated(['env', 'fraction', 'label']).any():
        dups = df[df.duplicated(['env', 'fraction', 'label'], keep=False)]
        raise InvalidArgument(
            'Several suites for the same cell: '
            f"{sorted(set(zip(dups['env'], dups['fraction'], dups['label'])))}"
        )
    df['cell'] = [
        _summary_cell(s, template, solved_at_template) for s in df['_summary']
    ]
    table = df.pivot(index=['env', 'fraction'], columns='label', values='cell')
    table.columns.name = None
    return _sorted_table(table).fillna('')


def instinct_ratio_correlations(dirs: Iterable[str]) -> pd.DataFrame:
    """Spearman correlation of the mean instinct ratio with the rewardless fraction,
    per (env, label) covering at least two fractions.

    The correlation is ``nan`` when the ratio doesn't vary.
    """
    df = summaries_frame(dirs)
    rows = []
    for (env, label), group in df.groupby(['env', 'label'], sort=True):
        if group['fraction'].nunique() < 2:
            continue
        rho = spearman(group['fraction'], group['mean_instinct_ratio'])
        rows.append(
            {'env': env, 'label': label, 'fractions': len(group), 'spearman': rho}
        )
    return pd.DataFrame(rows, columns=['env', 'label', 'fractions', 'spearman'])


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation (the Pearson correlation of average ranks).

    >>> round(spearman([0.0, 0.1, 0.2, 0.3], [0.2, 0.3, 0.35, 0.9]), 12)
    1.0
    >>> round(spearman([1, 2, 3], [3, 1, 2]), 12)
    -0.5
    """
    x, y = pd.Series(list(x), dtype=float), pd.Series(list(y), dtype=float)
    if len(x) != len(y):
        raise InvalidArgument('x and y must have the same length')
    return float(x.rank().corr(y.rank()))
