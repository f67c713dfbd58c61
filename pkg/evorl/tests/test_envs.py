import math

import numpy as np
import pytest

from evorl.envs import make_env, get_env_spec, env_classes, rk4_step
from evorl.util import InvalidArgument, ProtocolViolation


def rollout(env, actions, seed=0):
    obs = [env.reset(np.random.default_rng(seed))]
    rewards = []
    for a in actions:
        o, r, terminal, truncated = env.step(a)
        obs.append(o)
        rewards.append(r)
        if terminal or truncated:
            break
    return obs, rewards, terminal, truncated


@pytest.mark.parametrize('name', sorted(env_classes))
def test_reset_gives_observation_of_state_dim(name):
    env = make_env(name)
    obs = env.reset(np.random.default_rng(1))
    assert len(obs) == env.spec.state_dim
    assert all(isinstance(x, float) for x in obs)


@pytest.mark.parametrize('name', sorted(env_classes))
def test_same_seed_same_trajectory(name):
    actions = [i % get_env_spec(name).action_count for i in range(50)]
    assert rollout(make_env(name), actions, 3) == rollout(make_env(name), actions, 3)


def test_cartpole_initial_state_is_small():
    env = make_env('cartpole')
    for seed in range(20):
        obs = env.reset(np.random.default_rng(seed))
        assert all(-0.05 <= x <= 0.05 for x in obs)


def test_cartpole_pushing_one_way_falls_before_the_step_limit():
    env = make_env('cartpole')
    _, rewards, terminal, truncated = rollout(env, [1] * 200)
    assert terminal and not truncated
    assert len(rewards) < 200
    assert rewards == [1.0] * len(rewards)


def test_mountaincar_without_pushing_is_truncated():
    env = make_env('mountaincar')
    obs, rewards, terminal, truncated = rollout(env, [1] * 500)
    assert truncated and not terminal
    assert sum(rewards) == -200.0
    assert -0.6 <= obs[0][0] <= -0.4 and obs[0][1] == 0.0


def test_mountaincar_pushing_with_velocity_reaches_the_goal():
    env = make_env('mountaincar')
    obs = env.reset(np.random.default_rng(0))
    total, done = 0.0, False
    while not done:
        obs, r, terminal, truncated = env.step(2 if obs[1] >= 0 else 0)
        total += r
        done = terminal or truncated
    assert terminal
    assert total > -200


def test_acrobot_at_rest_is_truncated_at_500_steps():
    env = make_env('acrobot')
    obs, rewards, terminal, truncated = rollout(env, [1] * 1000)
    assert truncated and not terminal
    assert len(rewards) == 500
    assert sum(rewards) == -500.0
    cos_t1, sin_t1 = obs[-1][:2]
    assert math.isclose(cos_t1 ** 2 + sin_t1 ** 2, 1.0)


def test_acrobot_pays_nothing_for_the_step_that_reaches_the_goal():
    env = make_env('acrobot')
    env.reset(np.random.default_rng(0))
    env.state = (math.pi, 0.0, 0.0, 0.0)  # both links pointing up
    _, reward, terminal, truncated = env.step(1)
    assert terminal and not truncated
    assert reward == 0.0


def test_stepping_protocol():
    env = make_env('cartpole')
    with pytest.raises(ProtocolViolation):
        env.step(0)
    env.reset(np.random.default_rng(0))
    for bad_action in (2, -1, True, 0.5, None):
        with pytest.raises(InvalidArgument):
            env.step(bad_action)
    env.step(np.int64(1))  # numpy ints are fine
    rollout(env, [1] * 200)
    with pytest.raises(ProtocolViolation):
        env.step(0)


def test_invalid_action_is_a_value_error():
    env = make_env('acrobot')
    env.reset(np.random.default_rng(0))
    with pytest.raises(ValueError):
        env.step(3)


def test_unknown_env():
    with pytest.raises(InvalidArgument, match='Unknown env'):
        make_env('pendulum')


def test_rk4_is_exact_on_polynomials_up_to_degree_four():
    # y' = 4 t^3 as an autonomous system (t, y)
    t1, y1 = rk4_step(lambda s: (1.0, 4 * s[0] ** 3), (0.0, 0.0), 0.5)
    assert t1 == 0.5
    assert math.isclose(y1, 0.5 ** 4, rel_tol=1e-12)
