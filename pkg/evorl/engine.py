"""The evolutionary life cycle of agents, and the two baselines it is compared to.

Each generation, every (Born) agent goes through infancy, learning under the
precedence of its instinct, then maturity, where it is evaluated, and the
Fertile population produces the next generation by conception.

``run_evo_rl``, ``run_ea_only`` and ``run_rl_only`` yield one ``RunRecord`` per
generation (or per evaluation point, for the RL-only baseline).

All the randomness of a run is drawn from streams keyed by
``(generation, agent id, purpose)`` under the run's seed, so that records don't
depend on how many workers developed the agents, nor in which order.
"""

import base64
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from enum import Enum
from itertools import repeat
from typing import (
    Optional,
    List,
    Iterator,
    NamedTuple,
    MutableMapping,
    Mapping,
    Tuple,
    Union,
    TYPE_CHECKING,
)

import numpy as np

from evorl.behavior_tree import BTNode, tick, to_sexpr, parse_tree
from evorl.constants import DFLT_REPEAT_CAP, DFLT_EVAL_EPISODES, DFLT_INFANCY_EPISODES
from evorl.envs import ControlEnv, make_env, get_env_spec
from evorl.gp import (
    GPConfig,
    PrimitiveSet,
    primitive_set,
    init_trees,
    tournament_select,
    subtree_crossover,
    subtree_mutation,
    mutate_inherited,
)
from evorl.learners import (
    LearnedBehavior,
    Learner,
    LearnerConfig,
    Transition,
    initial_behavior,
    make_learner,
    merge_learned,
    serialize_learned,
    deserialize_learned,
)
from evorl.masking import BinGrid, MaskedEnv, RewardlessMask, grid_for, build_mask
from evorl.util import (
    InvalidArgument,
    ProtocolViolation,
    BudgetExhausted,
    derive_rng,
    derive_seed,
)

if TYPE_CHECKING:
    from evorl.harness import RunConfig

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------------------
# Agents


class LifeState(Enum):
    BORN = 'born'
    MATURE = 'mature'
    FERTILE = 'fertile'


_next_state = {LifeState.BORN: LifeState.MATURE, LifeState.MATURE: LifeState.FERTILE}


@dataclass
class Agent:
    """An instinct (``genotype``), a learned behavior and where the agent is in life.

    A ``genotype`` of ``None`` is an agent without instinct: the learner decides
    every step.
    """

    id: int
    genotype: Optional[BTNode]
    learned: LearnedBehavior
    life_state: LifeState = LifeState.BORN
    fitness: Optional[float] = None
    instinct_steps: int = 0
    total_steps: int = 0
    eval_instinct_steps: int = 0
    eval_total_steps: int = 0
    eval_returns: List[float] = field(default_factory=list)
    update_count: int = 0

    def advance(self, to: LifeState):
        if _next_state.get(self.life_state) is not to:
            raise ProtocolViolation(
                f'Agent {self.id} cannot go from {self.life_state.value} to {to.value}'
            )
        if to is LifeState.FERTILE and self.fitness is None:
            raise ProtocolViolation(f'Agent {self.id} cannot be fertile without fitness')
        self.life_state = to

    def instinct_ratio(self, phase: str = 'eval') -> float:
        """Fraction of the steps of ``phase`` ('eval' or 'infancy') decided by instinct"""
        if phase == 'eval':
            instinct, total = self.eval_instinct_steps, self.eval_total_steps
        elif phase == 'infancy':
            instinct, total = self.instinct_steps, self.total_steps
        else:
            raise InvalidArgument(f"phase must be 'eval' or 'infancy', not {phase!r}")
        return instinct / total if total else 0.0


def newborn(agent_id: int, genotype: Optional[BTNode], learned: LearnedBehavior):
    return Agent(agent_id, genotype, learned)


# --------------------------------------------------------------------------------------
# Overall policy


class OverallPolicy:
    """The instinct decides when its tree reaches an action, the learner otherwise"""

    def __init__(
        self,
        tree: Optional[BTNode],
        learner: Learner,
        *,
        repeat_cap: int = DFLT_REPEAT_CAP,
    ):
        self.tree = tree
        self.learner = learner
        self.repeat_cap = repeat_cap

    def decide(self, obs, *, greedy: bool = False) -> Tuple[int, bool]:
        """The action to take, and whether instinct chose it"""
        if self.tree is not None:
            action = tick(self.tree, obs, repeat_cap=self.repeat_cap).chosen_action
            if action is not None:
                return action, True
        return self.learner.act(obs, greedy=greedy), False

    def act(self, obs, *, greedy: bool = False) -> int:
        return self.decide(obs, greedy=greedy)[0]


class EpisodeStats(NamedTuple):
    true_returns: List[float]
    instinct_steps: int
    total_steps: int


def run_episodes(
    policy: OverallPolicy,
    env: MaskedEnv,
    rng: np.random.Generator,
    episodes: int,
    *,
    learn: bool,
) -> EpisodeStats:
    """Run full episodes of ``policy`` in ``env``.

    When ``learn``, the learner observes the transitions of the steps it decided
    (with the possibly withheld reward) and its exploration schedule advances after
    every episode. Steps decided by instinct are never learned from.
    """
    learner = policy.learner
    returns, instinct_steps, total_steps = [], 0, 0
    for _ in range(episodes):
        obs = env.reset(rng)
        while True:
            action, by_instinct = policy.decide(obs, greedy=not learn)
            outcome = env.step(action)
            total_steps += 1
            if by_instinct:
                instinct_steps += 1
            elif learn:
                learner.observe(
                    Transition(
                        obs, action, outcome.reward, outcome.observation, outcome.terminal
                    )
                )
            obs = outcome.observation
            if outcome.done:
                break
        returns.append(env.episode_true_return())
        if learn:
            learner.end_episode()
    return EpisodeStats(returns, instinct_steps, total_steps)


# --------------------------------------------------------------------------------------
# Budget


@dataclass
class BudgetLedger:
    """Budget consumption, in ``unit`` ('episodes' or 'individuals')"""

    unit: str
    cap: int
    consumed: int = 0
    solved_at: Optional[int] = None

    @property
    def remaining(self) -> int:
        return self.cap - self.consumed

    def can_afford(self, n: int) -> bool:
        return n <= self.remaining

    def charge(self, n: int):
        """
        >>> ledger = BudgetLedger('episodes', cap=25)
        >>> ledger.charge(20)
        >>> ledger.charge(10)
        Traceback (most recent call last):
          ...
        evorl.util.BudgetExhausted: Cannot spend 10 episodes: 5 of 25 remain
        """
        if n > self.remaining:
            raise BudgetExhausted(
                f'Cannot spend {n} {self.unit}: {self.remaining} of {self.cap} remain'
            )
        self.consumed += n

    def mark_solved(self):
        if self.solved_at is None:
            self.solved_at = self.consumed


# --------------------------------------------------------------------------------------
# Life phases


def infancy(
    agent: Agent,
    env: MaskedEnv,
    learner: Learner,
    rng: np.random.Generator,
    episodes: int = DFLT_INFANCY_EPISODES,
    *,
    ledger: Optional[BudgetLedger] = None,
    repeat_cap: int = DFLT_REPEAT_CAP,
) -> Agent:
    """Learn for ``episodes`` episodes, under the precedence of instinct.

    ``learner`` must be learning ``agent.learned``. The ``episodes`` are charged to
    ``ledger`` (if given) before anything runs.
    """
    if agent.life_state is not LifeState.BORN:
        raise ProtocolViolation(f'Only born agents go through infancy (agent {agent.id})')
    if learner.behavior is not agent.learned:
        raise InvalidArgument("The learner doesn't learn the agent's learned behavior")
    if ledger is not None:
        ledger.charge(episodes)
    policy = OverallPolicy(agent.genotype, learner, repeat_cap=repeat_cap)
    stats = run_episodes(policy, env, rng, episodes, learn=True)
    agent.instinct_steps += stats.instinct_steps
    agent.total_steps += stats.total_steps
    agent.update_count = learner.update_count
    agent.advance(LifeState.MATURE)
    return agent


def maturity_eval(
    agent: Agent,
    env: MaskedEnv,
    learner: Learner,
    rng: np.random.Generator,
    eval_episodes: int = DFLT_EVAL_EPISODES,
    *,
    repeat_cap: int = DFLT_REPEAT_CAP,
) -> Agent:
    """Evaluate a mature agent greedily; its fitness is its mean true return.

    Nothing is learned, and no budget is consumed.
    """
    if agent.life_state is not LifeState.MATURE:
        raise ProtocolViolation(
            f'Only mature agents can be evaluated (agent {agent.id} is '
            f'{agent.life_state.value})'
        )
    policy = OverallPolicy(agent.genotype, learner, repeat_cap=repeat_cap)
    stats = run_episodes(policy, env, rng, eval_episodes, learn=False)
    agent.eval_returns = stats.true_returns
    agent.eval_instinct_steps = stats.instinct_steps
    agent.eval_total_steps = stats.total_steps
    agent.fitness = float(np.mean(stats.true_returns))
    agent.advance(LifeState.FERTILE)
    return agent


def _fitness_key(agent: Agent):
    return (agent.fitness, -agent.id)


def conception(
    population: List[Agent],
    cfg: GPConfig,
    rng: np.random.Generator,
    pset: PrimitiveSet,
    *,
    inherit_learned: bool = True,
) -> List[Agent]:
    """The Born next generation of a Fertile population.

    The ``cfg.elitism`` best agents are copied as is. The others are offspring of two
    tournament-selected parents: their trees come from crossover then mutation, and
    they inherit the (mutated) merge of their parents' learned behaviors. With
    ``inherit_learned=False`` offspring get a copy of the first parent's learned
    behavior instead.

    Parents are never modified.
    """
    if any(a.life_state is not LifeState.FERTILE for a in population):
        raise ProtocolViolation('Conception needs an all-fertile population')
    n = cfg.population_size
    ranked = sorted(population, key=_fitness_key, reverse=True)
    children = [
        newborn(i, a.genotype, a.learned.copy())
        for i, a in enumerate(ranked[: cfg.elitism])
    ]
    while len(children) < n:
        parent_a = tournament_select(population, cfg.tournament_k, rng)
        parent_b = tournament_select(population, cfg.tournament_k, rng)
        trees = subtree_crossover(parent_a.genotype, parent_b.genotype, rng, cfg)
        for tree in trees:
            if len(children) == n:
                break
            tree = subtree_mutation(tree, rng, cfg, pset)
            if inherit_learned:
                merged = merge_learned(parent_a.learned, parent_b.learned)
                learned = mutate_inherited(merged, rng, cfg)
            else:
                learned = parent_a.learned.copy()
            children.append(newborn(len(children), tree, learned))
    return children


# --------------------------------------------------------------------------------------
# Run context


@dataclass(frozen=True)
class RunContext:
    """What a worker needs to develop (raise and evaluate) agents of a run"""

    env: str
    grid: BinGrid
    mask: RewardlessMask
    algo: str
    learner_cfg: LearnerConfig
    seed: int
    infancy_episodes: int
    eval_episodes: int
    decay_episodes: int
    repeat_cap: int = DFLT_REPEAT_CAP

    def masked_env(self) -> MaskedEnv:
        return MaskedEnv(make_env(self.env), self.grid, self.mask)

    def learner(self, learned, generation: int, agent_id: int) -> Learner:
        return make_learner(
            self.algo,
            learned,
            self.grid,
            self.learner_cfg,
            derive_rng(self.seed, generation, agent_id, 'learner'),
            decay_episodes=self.decay_episodes,
        )


def run_context(cfg: 'RunConfig', *, infancy: bool = True) -> RunContext:
    grid = grid_for(cfg.env, cfg.bins_per_dim)
    mask_seed = cfg.mask_seed
    if mask_seed is None:
        mask_seed = derive_seed(cfg.seed, 0, 0, 'mask')
    mask = build_mask(grid, cfg.fraction, mask_seed)
    return RunContext(
        env=cfg.env,
        grid=grid,
        mask=mask,
        algo=cfg.algo,
        learner_cfg=cfg.learner_config(),
        seed=cfg.seed,
        infancy_episodes=cfg.infancy_episodes if infancy else 0,
        eval_episodes=cfg.eval_episodes,
        decay_episodes=cfg.infancy_episodes,
        repeat_cap=cfg.repeat_cap,
    )


def develop_agent(agent: Agent, ctx: RunContext, generation: int) -> Agent:
    """Take a Born agent to Fertile: infancy (unless the context has none), then
    evaluation. Evaluation episodes start from the same states for all agents of a
    generation."""
    env = ctx.masked_env()
    learner = ctx.learner(agent.learned, generation, agent.id)
    if ctx.infancy_episodes:
        infancy_rng = derive_rng(ctx.seed, generation, agent.id, 'infancy')
        infancy(
            agent,
            env,
            learner,
            infancy_rng,
            ctx.infancy_episodes,
            repeat_cap=ctx.repeat_cap,
        )
    else:
        agent.advance(LifeState.MATURE)
    eval_rng = derive_rng(ctx.seed, generation, 0, 'eval')
    maturity_eval(
        agent, env, learner, eval_rng, ctx.eval_episodes, repeat_cap=ctx.repeat_cap
    )
    logger.debug(
        f'generation {generation}, agent {agent.id}: fitness={agent.fitness:.2f}, '
        f'instinct_ratio={agent.instinct_ratio():.3f}'
    )
    return agent


def _develop_all(population, ctx, generation, executor=None):
    if executor is None:
        return [develop_agent(a, ctx, generation) for a in population]
    return list(executor.map(develop_agent, population, repeat(ctx), repeat(generation)))


# --------------------------------------------------------------------------------------
# Records and checkpoints


@dataclass(frozen=True)
class RunRecord:
    """What a run reports after each generation (RL-only: after each evaluation point,
    numbered in ``generation``).

    ``best_fitness`` and ``instinct_ratio`` are those of the best agent so far,
    ``mean_fitness`` is the mean over the current generation.
    """

    generation: int
    evaluations: int
    best_fitness: float
    mean_fitness: float
    instinct_ratio: float
    solved: bool

    def to_row(self) -> tuple:
        return (
            self.generation,
            self.evaluations,
            self.best_fitness,
            self.mean_fitness,
            self.instinct_ratio,
            self.solved,
        )


class _Best(NamedTuple):
    fitness: float
    instinct_ratio: float


def checkpoint_jdict(
    generation: int, population: List[Agent], ledger: BudgetLedger, best: _Best
) -> dict:
    """The json-serializable state of a run after the conception of ``generation``"""
    return {
        'generation': generation,
        'consumed': ledger.consumed,
        'best_fitness': best.fitness,
        'best_instinct_ratio': best.instinct_ratio,
        'population': [
            {
                'id': a.id,
                'tree': None if a.genotype is None else to_sexpr(a.genotype),
                'learned': base64.b64encode(serialize_learned(a.learned)).decode(),
            }
            for a in population
        ],
    }


def population_from_checkpoint(jdict: dict) -> List[Agent]:
    return [
        newborn(
            int(d['id']),
            None if d['tree'] is None else parse_tree(d['tree']),
            deserialize_learned(base64.b64decode(d['learned'])),
        )
        for d in jdict['population']
    ]


def _last_checkpoint(store: Optional[Mapping]) -> Optional[dict]:
    if not store:
        return None
    return store[max(store)]


# --------------------------------------------------------------------------------------
# Runs


def initial_population(cfg: 'RunConfig', ctx: RunContext, pset: PrimitiveSet):
    spec = get_env_spec(cfg.env)
    trees = init_trees(
        cfg.gp.population_size, pset, cfg.gp, derive_rng(cfg.seed, 0, 0, 'conception')
    )
    return [
        newborn(
            i,
            tree,
            initial_behavior(
                cfg.algo,
                spec,
                ctx.grid,
                ctx.learner_cfg,
                derive_rng(cfg.seed, 0, i, 'init'),
            ),
        )
        for i, tree in enumerate(trees)
    ]


def _evolve(
    cfg: 'RunConfig',
    ctx: RunContext,
    ledger: BudgetLedger,
    *,
    cost_per_generation: int,
    max_generations: int,
    inherit_learned: bool,
    checkpoints: Optional[MutableMapping] = None,
    resume_from: Optional[Mapping] = None,
) -> Iterator[RunRecord]:
    spec = get_env_spec(cfg.env)
    pset = primitive_set(ctx.grid, spec.action_count, cfg.gp)
    best = None
    start = 1
    if (state := _last_checkpoint(resume_from)) is not None:
        start = int(state['generation']) + 1
        ledger.consumed = int(state['consumed'])
        best = _Best(float(state['best_fitness']), float(state['best_instinct_ratio']))
        population = population_from_checkpoint(state)
        logger.info(f'Resuming {cfg.env} run at generation {start}')
    else:
        population = initial_population(cfg, ctx, pset)

    with ExitStack() as stack:
        executor = None
        if cfg.workers > 1:
            executor = stack.enter_context(ProcessPoolExecutor(cfg.workers))
        for generation in range(start, max_generations + 1):
            if not ledger.can_afford(cost_per_generation):
                logger.info(
                    f'Budget exhausted before generation {generation} '
                    f'({ledger.consumed} of {ledger.cap} {ledger.unit} consumed)'
                )
                break
            ledger.charge(cost_per_generation)
            population = _develop_all(population, ctx, generation, executor)
            gen_best = max(population, key=_fitness_key)
            if best is None or gen_best.fitness > best.fitness:
                ratio = gen_best.instinct_ratio(cfg.instinct_ratio_phase)
                best = _Best(gen_best.fitness, ratio)
            solved = best.fitness >= spec.reward_threshold
            if solved:
                ledger.mark_solved()
            record = RunRecord(
                generation=generation,
                evaluations=ledger.consumed,
                best_fitness=best.fitness,
                mean_fitness=float(np.mean([a.fitness for a in population])),
                instinct_ratio=best.instinct_ratio,
                solved=solved,
            )
            logger.info(
                f'{cfg.env} generation {generation}: best={record.best_fitness:.2f} '
                f'mean={record.mean_fitness:.2f} '
                f'instinct_ratio={record.instinct_ratio:.3f} '
                f'({record.evaluations} {ledger.unit})'
            )
            yield record
            if solved:
                break
            population = conception(
                population,
                cfg.gp,
                derive_rng(cfg.seed, generation, 0, 'conception'),
                pset,
                inherit_learned=inherit_learned,
            )
            if checkpoints is not None:
                checkpoints[generation] = checkpoint_jdict(
                    generation, population, ledger, best
                )


def run_evo_rl(
    cfg: 'RunConfig',
    *,
    ledger: Optional[BudgetLedger] = None,
    checkpoints: Optional[MutableMapping] = None,
    resume_from: Optional[Mapping] = None,
) -> Iterator[RunRecord]:
    """Evolve instincts of agents that learn during their infancy.

    A generation costs ``population_size * infancy_episodes`` learning episodes and
    only runs if the remaining budget covers it. The run stops at the budget cap,
    after ``cfg.gp.generations`` generations, or when the best fitness reaches the
    env's reward threshold.

    If ``checkpoints`` is given, the state of the run is stored in it after every
    conception (keyed by generation). A run can be resumed from such a store with
    ``resume_from``, giving the same records the uninterrupted run would.
    """
    cfg.validate()
    ctx = run_context(cfg, infancy=True)
    ledger = ledger or BudgetLedger('episodes', cfg.budget)
    return _evolve(
        cfg,
        ctx,
        ledger,
        cost_per_generation=cfg.gp.population_size * cfg.infancy_episodes,
        max_generations=cfg.gp.generations,
        inherit_learned=True,
        checkpoints=checkpoints,
        resume_from=resume_from,
    )


def run_ea_only(
    cfg: 'RunConfig',
    *,
    ledger: Optional[BudgetLedger] = None,
    checkpoints: Optional[MutableMapping] = None,
    resume_from: Optional[Mapping] = None,
) -> Iterator[RunRecord]:
    """Evolve instincts alone: no infancy, learned behaviors stay as initialized.

    The budget is counted in individuals (one per agent per generation), so the run
    has ``budget // population_size`` generations.
    """
    cfg.validate()
    ctx = run_context(cfg, infancy=False)
    ledger = ledger or BudgetLedger('individuals', cfg.budget)
    return _evolve(
        cfg,
        ctx,
        ledger,
        cost_per_generation=cfg.gp.population_size,
        max_generations=cfg.budget // cfg.gp.population_size,
        inherit_learned=False,
        checkpoints=checkpoints,
        resume_from=resume_from,
    )


def run_rl_only(
    cfg: 'RunConfig', *, ledger: Optional[BudgetLedger] = None
) -> Iterator[RunRecord]:
    """Train a single instinct-less learner on the whole budget.

    Every ``cfg.eval_interval`` training episodes (and after the last ones), the
    learner is evaluated greedily on ``cfg.eval_episodes`` episodes.
    """
    cfg.validate()
    ctx = run_context(cfg, infancy=True)
    spec = get_env_spec(cfg.env)
    ledger = ledger or BudgetLedger('episodes', cfg.budget)
    return _train_alone(cfg, ctx, spec, ledger)


def _train_alone(cfg, ctx, spec, ledger):
    learned = initial_behavior(
        cfg.algo, spec, ctx.grid, ctx.learner_cfg, derive_rng(cfg.seed, 0, 0, 'init')
    )
    learner = make_learner(
        cfg.algo,
        learned,
        ctx.grid,
        ctx.learner_cfg,
        derive_rng(cfg.seed, 0, 0, 'learner'),
        decay_episodes=cfg.rl_decay_episodes,
    )
    policy = OverallPolicy(None, learner, repeat_cap=ctx.repeat_cap)
    env = ctx.masked_env()
    train_rng = derive_rng(cfg.seed, 0, 0, 'infancy')
    best = -math.inf
    eval_point = 0
    while ledger.remaining > 0:
        episodes = min(cfg.eval_interval, ledger.remaining)
        ledger.charge(episodes)
        run_episodes(policy, env, train_rng, episodes, learn=True)
        eval_point += 1
        stats = run_episodes(
            policy,
            env,
            derive_rng(cfg.seed, eval_point, 0, 'eval'),
            cfg.eval_episodes,
            learn=False,
        )
        mean_return = float(np.mean(stats.true_returns))
        best = max(best, mean_return)
        solved = mean_return >= spec.reward_threshold
        if solved:
            ledger.mark_solved()
        logger.info(
            f'{cfg.env} eval point {eval_point}: mean return {mean_return:.2f} '
            f'after {ledger.consumed} episodes'
        )
        yield RunRecord(
            generation=eval_point,
            evaluations=ledger.consumed,
            best_fitness=best,
            mean_fitness=mean_return,
            instinct_ratio=0.0,
            solved=solved,
        )
        if solved:
            break


run_functions = {
    'evo-rl': run_evo_rl,
    'ea-only': run_ea_only,
    'rl-only': run_rl_only,
}


def run(cfg: 'RunConfig', **kwargs) -> Iterator[RunRecord]:
    """The records of a run of ``cfg.mode``"""
    try:
        run_func = run_functions[cfg.mode]
    except KeyError:
        raise InvalidArgument(f'Unknown mode: {cfg.mode!r}')
    return run_func(cfg, **kwargs)


# --------------------------------------------------------------------------------------
# Baselines


def random_policy_baseline(
    env: Union[str, ControlEnv], episodes: int = 1_000, seed: int = 0
) -> float:
    """Mean return of a uniformly random policy.

    >>> 9 < random_policy_baseline('cartpole', episodes=50, seed=1) < 60
    True
    """
    if isinstance(env, str):
        env = make_env(env)
    if episodes < 1:
        raise InvalidArgument('episodes must be positive')
    rng = derive_rng(seed, 0, 0, 'trial')
    n_actions = env.spec.action_count
    returns = []
    for _ in range(episodes):
        env.reset(rng)
        total, done = 0.0, False
        while not done:
            _, reward, terminal, truncated = env.step(int(rng.integers(n_actions)))
            total += reward
            done = terminal or truncated
        returns.append(total)
    return float(np.mean(returns))
