import numpy as np
import pytest

from evorl.behavior_tree import act, cond, sel, seq, to_sexpr
from evorl.engine import (
    Agent,
    BudgetLedger,
    LifeState,
    OverallPolicy,
    conception,
    infancy,
    maturity_eval,
    random_policy_baseline,
    run_ea_only,
    run_evo_rl,
    run_rl_only,
)
from evorl.envs import get_env_spec
from evorl.gp import GPConfig, init_trees, primitive_set, EXTENDED_COMPOSITES
from evorl.harness import RunConfig
from evorl.learners import QConfig, QLearner, QTable, merge_learned, serialize_learned
from evorl.masking import grid_for, make_masked_env
from evorl.stores import checkpoint_store
from evorl.util import BudgetExhausted, ConfigError, ProtocolViolation


class CountingQLearner(QLearner):
    """A Q-learner that counts what it's asked to observe"""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.observed = 0
        self.observed_without_reward = 0

    def observe(self, transition):
        self.observed += 1
        self.observed_without_reward += transition.reward is None
        super().observe(transition)


def _raise(tree, env='cartpole', fraction=0.0, episodes=3, seed=0):
    masked_env = make_masked_env(env, fraction, seed=seed)
    agent = Agent(0, tree, QTable(masked_env.grid.total_bins, masked_env.spec.action_count))
    learner = CountingQLearner(
        agent.learned,
        masked_env.grid,
        QConfig(),
        np.random.default_rng(seed),
        decay_episodes=episodes,
    )
    infancy(agent, masked_env, learner, np.random.default_rng(seed + 1), episodes)
    return agent, learner, masked_env


# --------------------------------------------------------------------------------------
# Infancy


def test_instinct_that_always_acts_leaves_the_learner_untouched():
    agent, learner, _ = _raise(act(1))
    assert agent.instinct_steps == agent.total_steps > 0
    assert learner.observed == 0 and learner.update_count == 0
    assert agent.learned.entries == {}
    assert agent.life_state is LifeState.MATURE


def test_instinct_that_never_acts_is_plain_learning():
    with_condition, learner_a, _ = _raise(cond(0, '<', 0.0), seed=4)
    without_instinct, learner_b, _ = _raise(None, seed=4)
    assert with_condition.instinct_steps == 0
    assert serialize_learned(with_condition.learned) == serialize_learned(
        without_instinct.learned
    )
    assert learner_a.update_count == learner_b.update_count


def test_every_step_is_learned_from_without_instinct_and_masking():
    agent, learner, _ = _raise(None, episodes=5)
    assert learner.update_count == agent.total_steps


@pytest.mark.parametrize('env', ['cartpole', 'mountaincar', 'acrobot'])
def test_instinct_precedence_on_random_agents(env):
    pset = primitive_set(grid_for(env), get_env_spec(env).action_count)
    cfg = GPConfig(init_depth_range=(1, 4))
    rng = np.random.default_rng(0)
    trees = init_trees(334, pset, cfg, rng)
    for i, tree in enumerate(trees):
        fraction = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5][i % 6]
        agent, learner, _ = _raise(tree, env, fraction, episodes=1, seed=i)
        learned_steps = agent.total_steps - agent.instinct_steps
        assert learner.observed == learned_steps
        assert learner.update_count == learned_steps - learner.observed_without_reward
        assert agent.update_count == learner.update_count


def test_infancy_charges_its_episodes():
    env = make_masked_env('cartpole')
    agent = Agent(0, act(0), QTable(256, 2))
    learner = QLearner(agent.learned, env.grid, QConfig(), np.random.default_rng(0))
    ledger = BudgetLedger('episodes', cap=5)
    with pytest.raises(BudgetExhausted):
        infancy(agent, env, learner, np.random.default_rng(0), 10, ledger=ledger)
    assert agent.life_state is LifeState.BORN
    infancy(agent, env, learner, np.random.default_rng(0), 4, ledger=ledger)
    assert ledger.consumed == 4


# --------------------------------------------------------------------------------------
# Maturity


def test_life_states_only_move_forward():
    env = make_masked_env('cartpole')
    agent = Agent(0, act(0), QTable(256, 2))
    learner = QLearner(agent.learned, env.grid, QConfig(), np.random.default_rng(0))
    with pytest.raises(ProtocolViolation):
        maturity_eval(agent, env, learner, np.random.default_rng(0), 2)
    infancy(agent, env, learner, np.random.default_rng(0), 1)
    with pytest.raises(ProtocolViolation):
        infancy(agent, env, learner, np.random.default_rng(0), 1)
    maturity_eval(agent, env, learner, np.random.default_rng(0), 2)
    assert agent.life_state is LifeState.FERTILE
    with pytest.raises(ProtocolViolation):
        agent.advance(LifeState.BORN)


def _mature(tree, seed=0):
    agent, learner, env = _raise(tree, seed=seed)
    return agent, learner, env


def test_fitness_is_the_mean_true_return_of_greedy_episodes():
    agent, learner, env = _mature(sel(seq(cond(3, '>=', 0.0), act(1)), cond(0, '<', 9.0)))
    before = serialize_learned(agent.learned)
    maturity_eval(agent, env, learner, np.random.default_rng(7), 20)
    assert len(agent.eval_returns) == 20
    assert agent.fitness == np.mean(agent.eval_returns)
    assert serialize_learned(agent.learned) == before
    assert agent.eval_total_steps == sum(agent.eval_returns)  # cartpole: +1 per step
    assert 0.0 < agent.instinct_ratio() < 1.0


def test_evaluation_uses_true_rewards_under_masking():
    agent, learner, env = _raise(act(0), fraction=0.5)
    maturity_eval(agent, env, learner, np.random.default_rng(0), 5)
    assert agent.fitness == agent.eval_total_steps / 5
    assert agent.instinct_ratio() == 1.0


def test_same_eval_seed_same_fitness():
    fitnesses = []
    for _ in range(2):
        agent, learner, env = _mature(seq(cond(2, '<', 0.0), act(0)), seed=3)
        maturity_eval(agent, env, learner, np.random.default_rng(11), 10)
        fitnesses.append(agent.fitness)
    assert fitnesses[0] == fitnesses[1]


def test_overall_policy_prefers_instinct():
    env = make_masked_env('cartpole')
    learner = QLearner(QTable(256, 2, {(0, 1): 5.0}), env.grid, QConfig(), None)
    policy = OverallPolicy(seq(cond(0, '<', 0.0), act(0)), learner)
    assert policy.decide((-2.0, 0.0, 0.0, 0.0), greedy=True) == (0, True)
    assert policy.decide((1.0, 0.0, 0.0, 0.0), greedy=True)[1] is False
    assert OverallPolicy(None, learner).decide((-9.0, -9.0, -9.0, -9.0), greedy=True) == (
        1,
        False,
    )


# --------------------------------------------------------------------------------------
# Conception


def _fertile_population(n, seed=0, fitnesses=None):
    pset = primitive_set(grid_for('cartpole'), 2)
    rng = np.random.default_rng(seed)
    trees = init_trees(n, pset, GPConfig(), rng)
    population = []
    for i, tree in enumerate(trees):
        entries = {(int(rng.integers(256)), int(rng.integers(2))): float(rng.normal())}
        agent = Agent(i, tree, QTable(256, 2, entries))
        agent.advance(LifeState.MATURE)
        agent.fitness = float(fitnesses[i] if fitnesses else rng.uniform(0, 200))
        agent.advance(LifeState.FERTILE)
        population.append(agent)
    return population, pset


def test_elite_is_copied_unchanged():
    population, pset = _fertile_population(10, fitnesses=[5, 9, 3, 50, 1, 2, 8, 7, 6, 4])
    children = conception(population, GPConfig(population_size=10), np.random.default_rng(0), pset)
    best = population[3]
    assert to_sexpr(children[0].genotype) == to_sexpr(best.genotype)
    assert serialize_learned(children[0].learned) == serialize_learned(best.learned)
    assert children[0].learned is not best.learned


def test_without_variation_children_copy_trees_and_average_learning():
    population, pset = _fertile_population(6, seed=1)
    cfg = GPConfig(
        population_size=6,
        crossover_rate=0.0,
        mutation_rate=0.0,
        inherited_mutation_rate=0.0,
        elitism=0,
    )
    children = conception(population, cfg, np.random.default_rng(2), pset)
    trees = {to_sexpr(a.genotype) for a in population}
    averages = [
        serialize_learned(merge_learned(a.learned, b.learned))
        for a in population
        for b in population
    ]
    for child in children:
        assert to_sexpr(child.genotype) in trees
        assert serialize_learned(child.learned) in averages


def test_conception_never_modifies_parents():
    population, pset = _fertile_population(8, seed=3)
    before = [(to_sexpr(a.genotype), serialize_learned(a.learned)) for a in population]
    cfg = GPConfig(population_size=8, crossover_rate=1.0, mutation_rate=1.0,
                   inherited_mutation_rate=1.0, inherited_element_prob=1.0)
    conception(population, cfg, np.random.default_rng(4), pset)
    after = [(to_sexpr(a.genotype), serialize_learned(a.learned)) for a in population]
    assert before == after


def test_population_size_is_constant_across_generations():
    cfg = GPConfig(population_size=10, extended_primitives=True)
    pset = primitive_set(grid_for('cartpole'), 2, cfg)
    assert set(EXTENDED_COMPOSITES) == set(pset.composites)
    population, _ = _fertile_population(10)
    rng = np.random.default_rng(5)
    for _ in range(100):
        children = conception(population, cfg, rng, pset)
        assert len(children) == 10
        assert [c.id for c in children] == list(range(10))
        assert all(c.life_state is LifeState.BORN and c.fitness is None for c in children)
        for c in children:
            c.advance(LifeState.MATURE)
            c.fitness = float(rng.uniform(0, 200))
            c.advance(LifeState.FERTILE)
        population = children


def test_conception_needs_a_fertile_population():
    population, pset = _fertile_population(4)
    population[2].life_state = LifeState.MATURE
    with pytest.raises(ProtocolViolation):
        conception(population, GPConfig(population_size=4), np.random.default_rng(0), pset)


# --------------------------------------------------------------------------------------
# Runs


def small_cfg(**kwargs):
    d = dict(
        env='cartpole',
        budget=10_000,
        infancy_episodes=2,
        eval_episodes=2,
        gp={'population_size': 4, 'generations': 3, 'tournament_k': 2},
    )
    d.update(kwargs)
    return RunConfig(**d)


def test_budget_arithmetic():
    ledger = BudgetLedger('episodes', 60_000)
    for generation in range(1, 37):
        ledger.charge(30 * 10)
    ledger.mark_solved()
    ledger.mark_solved()
    assert ledger.solved_at == 10_800
    for generation in range(37, 201):
        ledger.charge(300)
    assert ledger.consumed == 200 * 30 * 10 == 60_000
    assert not ledger.can_afford(1)


def test_evo_rl_run_consumes_its_closed_form_budget():
    ledger = BudgetLedger('episodes', 10_000)
    records = list(run_evo_rl(small_cfg(), ledger=ledger))
    assert ledger.consumed == 4 * 2 * len(records)
    assert [r.evaluations for r in records] == [8 * g for g in range(1, len(records) + 1)]
    assert len(records) == 3 or records[-1].solved
    best = [r.best_fitness for r in records]
    assert best == sorted(best)


def test_runs_stop_before_an_unaffordable_generation():
    ledger = BudgetLedger('episodes', 20)
    records = list(
        run_evo_rl(small_cfg(budget=20, gp={'population_size': 4, 'generations': 10,
                                             'tournament_k': 2}), ledger=ledger)
    )
    assert len(records) <= 2
    assert ledger.consumed <= 16


def test_zero_generations():
    ledger = BudgetLedger('episodes', 10_000)
    cfg = small_cfg(gp={'population_size': 4, 'generations': 0, 'tournament_k': 2})
    assert list(run_evo_rl(cfg, ledger=ledger)) == []
    assert ledger.consumed == 0


def test_invalid_configs_are_rejected_before_running():
    with pytest.raises(ConfigError):
        run_evo_rl(small_cfg(env='pendulum'))
    with pytest.raises(ConfigError, match='not implemented'):
        run_rl_only(small_cfg(algo='ppo'))
    with pytest.raises(ConfigError):
        run_ea_only(small_cfg(fraction=0.25))


def test_runs_are_deterministic():
    cfg = small_cfg(fraction=0.2)
    assert list(run_evo_rl(cfg)) == list(run_evo_rl(cfg))


def test_runs_dont_depend_on_worker_count():
    cfg = small_cfg(algo='dqn', learner={'hidden_sizes': [8], 'batch_size': 4})
    assert list(run_evo_rl(cfg)) == list(run_evo_rl(small_cfg(
        algo='dqn', learner={'hidden_sizes': [8], 'batch_size': 4}, workers=2
    )))


def test_resumed_runs_continue_identically(tmp_path):
    cfg = small_cfg(gp={'population_size': 4, 'generations': 4, 'tournament_k': 2})
    checkpoints = checkpoint_store(str(tmp_path / 'full'))
    full = list(run_evo_rl(cfg, checkpoints=checkpoints))
    partial = checkpoint_store(str(tmp_path / 'partial'))
    for generation in checkpoints:
        if generation <= 2:
            partial[generation] = checkpoints[generation]
    if 2 not in list(partial):
        pytest.skip('solved before a second checkpoint')
    resumed = list(run_evo_rl(cfg, resume_from=partial))
    assert resumed == [r for r in full if r.generation > 2]


def test_ea_only_spends_individuals_and_never_learns(tmp_path):
    ledger = BudgetLedger('individuals', 20)
    checkpoints = checkpoint_store(str(tmp_path))
    cfg = small_cfg(budget=20, mode='ea-only')
    records = list(run_ea_only(cfg, ledger=ledger, checkpoints=checkpoints))
    assert [r.evaluations for r in records] == [4 * g for g in range(1, len(records) + 1)]
    assert len(records) == 5 or records[-1].solved
    for generation in checkpoints:
        for agent in checkpoints[generation]['population']:
            assert agent['learned'] == checkpoints[1]['population'][0]['learned']


def test_rl_only_evaluates_periodically_without_instinct():
    ledger = BudgetLedger('episodes', 50)
    cfg = small_cfg(budget=50, mode='rl-only', eval_interval=20, rl_decay_episodes=30)
    records = list(run_rl_only(cfg, ledger=ledger))
    assert all(r.instinct_ratio == 0.0 for r in records)
    assert [r.evaluations for r in records] == [20, 40, 50][: len(records)]
    assert len(records) == 3 or records[-1].solved
    assert [r.generation for r in records] == list(range(1, len(records) + 1))


def test_random_policy_baseline():
    assert 15 < random_policy_baseline('cartpole', episodes=1000, seed=0) < 30
    assert random_policy_baseline('mountaincar', episodes=3) == -200.0
