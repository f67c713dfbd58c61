"""Classic control problems: CartPole, Acrobot and MountainCar.

These are deterministic re-implementations of the public reference problems
(CartPole-v0, Acrobot-v1, MountainCar-v0). Only the initial state is random, and it
is drawn from a numpy ``Generator`` that the caller provides, so that
``(generator state, action sequence)`` fully determines a trajectory.

>>> import numpy as np
>>> env = make_env('cartpole')
>>> obs = env.reset(np.random.default_rng(0))
>>> len(obs), all(abs(x) <= 0.05 for x in obs)
(4, True)
>>> total = 0.0
>>> done = False
>>> while not done:
...     obs, reward, terminal, truncated = env.step(1)
...     total += reward
...     done = terminal or truncated
>>> total == env.steps
True
"""

import math
from dataclasses import dataclass
from typing import Tuple, Dict, Callable

import numpy as np

from evorl.util import InvalidArgument, ProtocolViolation

Observation = Tuple[float, ...]
StepResult = Tuple[Observation, float, bool, bool]


@dataclass(frozen=True)
class EnvSpec:
    """What there is to know about a control problem, without simulating it.

    ``low`` and ``high`` are the bounds observations get clipped to when binned.
    """

    name: str
    state_dim: int
    action_count: int
    max_episode_steps: int
    reward_threshold: float
    low: Tuple[float, ...]
    high: Tuple[float, ...]
    dflt_bins_per_dim: Tuple[int, ...]

    def __post_init__(self):
        if self.action_count < 2:
            raise InvalidArgument(f'action_count must be >= 2: {self.action_count}')
        if self.max_episode_steps < 1:
            raise InvalidArgument(
                f'max_episode_steps must be >= 1: {self.max_episode_steps}'
            )
        for seq in (self.low, self.high, self.dflt_bins_per_dim):
            if len(seq) != self.state_dim:
                raise InvalidArgument(
                    f'{self.name}: expected {self.state_dim} entries, got {seq}'
                )

    @property
    def return_bounds(self) -> Tuple[float, float]:
        """The (min, max) return any episode can have"""
        if self.name == 'cartpole':
            return 1.0, float(self.max_episode_steps)
        return -float(self.max_episode_steps), -1.0


class ControlEnv:
    """Base of the control problems.

    Subclasses implement ``_initial_state``, ``_dynamics`` and ``_observation``.
    The episode protocol (reset before stepping, no stepping after the episode
    ended) is enforced here.
    """

    spec: EnvSpec

    def __init__(self):
        self.state = None
        self.steps = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> Observation:
        self.state = self._initial_state(rng)
        self.steps = 0
        self.done = False
        return self._observation(self.state)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise ProtocolViolation(
                f'{self.spec.name}: the episode is over (or never started); '
                'call reset before stepping'
            )
        valid = isinstance(action, (int, np.integer)) and not isinstance(action, bool)
        if not (valid and 0 <= action < self.spec.action_count):
            raise InvalidArgument(
                f'{self.spec.name}: invalid action {action!r} '
                f'(expected an int in [0, {self.spec.action_count}))'
            )
        self.state, reward, terminal = self._dynamics(self.state, int(action))
        self.steps += 1
        truncated = not terminal and self.steps >= self.spec.max_episode_steps
        self.done = terminal or truncated
        return self._observation(self.state), reward, terminal, truncated

    def _initial_state(self, rng: np.random.Generator):
        raise NotImplementedError

    def _dynamics(self, state, action: int):
        raise NotImplementedError

    def _observation(self, state) -> Observation:
        return tuple(float(x) for x in state)

    def __repr__(self):
        return f'{type(self).__name__}()'


# --------------------------------------------------------------------------------------
# CartPole


class CartPole(ControlEnv):
    """Balance a pole on a cart by pushing the cart left (0) or right (1).

    Euler-integrated cart-pole equations, +1 reward per step including the failing
    one, failure when the pole leans more than 12 degrees or the cart leaves
    ``[-2.4, 2.4]``.
    """

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    total_mass = masspole + masscart
    length = 0.5  # half the pole's length
    polemass_length = masspole * length
    force_mag = 10.0
    tau = 0.02
    theta_threshold_radians = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    spec = EnvSpec(
        name='cartpole',
        state_dim=4,
        action_count=2,
        max_episode_steps=200,
        reward_threshold=195.0,
        low=(-2.4, -3.0, -12 * 2 * math.pi / 360, -3.5),
        high=(2.4, 3.0, 12 * 2 * math.pi / 360, 3.5),
        dflt_bins_per_dim=(4, 4, 4, 4),
    )

    def _initial_state(self, rng):
        return tuple(float(x) for x in rng.uniform(-0.05, 0.05, size=4))

    def _dynamics(self, state, action):
        x, x_dot, theta, theta_dot = state
        force = self.force_mag if action == 1 else -self.force_mag
        costheta = math.cos(theta)
        sintheta = math.sin(theta)
        temp = (
            force + self.polemass_length * theta_dot * theta_dot * sintheta
        ) / self.total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length
            * (4.0 / 3.0 - self.masspole * costheta * costheta / self.total_mass)
        )
        xacc = temp - self.polemass_length * thetaacc * costheta / self.total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * xacc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * thetaacc
        terminal = (
            x < -self.x_threshold
            or x > self.x_threshold
            or theta < -self.theta_threshold_radians
            or theta > self.theta_threshold_radians
        )
        return (x, x_dot, theta, theta_dot), 1.0, terminal


# --------------------------------------------------------------------------------------
# MountainCar


class MountainCar(ControlEnv):
    """Drive an under-powered car up a hill: push left (0), don't push (1), push right (2).

    -1 reward per step; the episode ends when the position reaches 0.5.
    """

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.5
    force = 0.001
    gravity = 0.0025

    spec = EnvSpec(
        name='mountaincar',
        state_dim=2,
        action_count=3,
        max_episode_steps=200,
        reward_threshold=-110.0,
        low=(-1.2, -0.07),
        high=(0.6, 0.07),
        dflt_bins_per_dim=(16, 16),
    )

    def _initial_state(self, rng):
        return (float(rng.uniform(-0.6, -0.4)), 0.0)

    def _dynamics(self, state, action):
        position, velocity = state
        velocity += (action - 1) * self.force + math.cos(3 * position) * (-self.gravity)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        terminal = position >= self.goal_position
        return (position, velocity), -1.0, terminal


# --------------------------------------------------------------------------------------
# Acrobot


def _wrap(x: float, m: float, big_m: float) -> float:
    diff = big_m - m
    while x > big_m:
        x = x - diff
    while x < m:
        x = x + diff
    return x


def _bound(x: float, m: float, big_m: float) -> float:
    return min(max(x, m), big_m)


def rk4_step(derivs: Callable, y0: Tuple[float, ...], dt: float) -> Tuple[float, ...]:
    """One classical Runge-Kutta step of size ``dt`` for the autonomous system ``derivs``.

    >>> round(rk4_step(lambda y: (y[0],), (1.0,), 0.1)[0], 6)  # exp(0.1)
    1.105171
    """
    k1 = derivs(y0)
    k2 = derivs(tuple(y + dt / 2 * k for y, k in zip(y0, k1)))
    k3 = derivs(tuple(y + dt / 2 * k for y, k in zip(y0, k2)))
    k4 = derivs(tuple(y + dt * k for y, k in zip(y0, k3)))
    return tuple(
        y + dt / 6.0 * (a + 2 * b + 2 * c + d)
        for y, a, b, c, d in zip(y0, k1, k2, k3, k4)
    )


class Acrobot(ControlEnv):
    """Swing the free end of a two-link underactuated pendulum above a line.

    Torque -1 (0), 0 (1) or +1 (2) on the joint between the links. Dynamics follow
    the book formulation and are integrated with one RK4 step of 0.2 s. Reward is -1
    per step, 0 on the step that reaches the goal.
    Observations are ``(cos t1, sin t1, cos t2, sin t2, dt1, dt2)``.
    """

    dt = 0.2
    link_length_1 = 1.0
    link_mass_1 = 1.0
    link_mass_2 = 1.0
    link_com_pos_1 = 0.5
    link_com_pos_2 = 0.5
    link_moi = 1.0
    max_vel_1 = 4 * math.pi
    max_vel_2 = 9 * math.pi
    avail_torque = (-1.0, 0.0, 1.0)

    spec = EnvSpec(
        name='acrobot',
        state_dim=6,
        action_count=3,
        max_episode_steps=500,
        reward_threshold=-100.0,
        low=(-1.0, -1.0, -1.0, -1.0, -4 * math.pi, -9 * math.pi),
        high=(1.0, 1.0, 1.0, 1.0, 4 * math.pi, 9 * math.pi),
        dflt_bins_per_dim=(3, 3, 3, 3, 3, 3),
    )

    def _initial_state(self, rng):
        return tuple(float(x) for x in rng.uniform(-0.1, 0.1, size=4))

    def _dsdt(self, s_augmented):
        m1, m2 = self.link_mass_1, self.link_mass_2
        l1 = self.link_length_1
        lc1, lc2 = self.link_com_pos_1, self.link_com_pos_2
        i1 = i2 = self.link_moi
        g = 9.8
        theta1, theta2, dtheta1, dtheta2, a = s_augmented
        d1 = (
            m1 * lc1 ** 2
            + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * math.cos(theta2))
            + i1
            + i2
        )
        d2 = m2 * (lc2 ** 2 + l1 * lc2 * math.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2 ** 2 * math.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
            + phi2
        )
        ddtheta2 = (
            a
            + d2 / d1 * phi1
            - m2 * l1 * lc2 * dtheta1 ** 2 * math.sin(theta2)
            - phi2
        ) / (m2 * lc2 ** 2 + i2 - d2 ** 2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0

    def _dynamics(self, state, action):
        torque = self.avail_torque[action]
        ns = rk4_step(self._dsdt, (*state, torque), self.dt)
        ns = (
            _wrap(ns[0], -math.pi, math.pi),
            _wrap(ns[1], -math.pi, math.pi),
            _bound(ns[2], -self.max_vel_1, self.max_vel_1),
            _bound(ns[3], -self.max_vel_2, self.max_vel_2),
        )
        terminal = -math.cos(ns[0]) - math.cos(ns[1] + ns[0]) > 1.0
        return ns, (0.0 if terminal else -1.0), terminal

    def _observation(self, state):
        t1, t2, dt1, dt2 = state
        return (math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), dt1, dt2)


# --------------------------------------------------------------------------------------
# Registry

env_classes: Dict[str, type] = {
    'cartpole': CartPole,
    'acrobot': Acrobot,
    'mountaincar': MountainCar,
}


def get_env_spec(name: str) -> EnvSpec:
    """The ``EnvSpec`` of the env registered under ``name``.

    >>> get_env_spec('cartpole').reward_threshold
    195.0
    >>> get_env_spec('mountaincar').max_episode_steps
    200
    """
    return _env_class(name).spec


def make_env(name: str) -> ControlEnv:
    return _env_class(name)()


def _env_class(name: str) -> type:
    try:
        return env_classes[name]
    except KeyError:
        raise InvalidArgument(f'Unknown env: {name!r}. Known: {sorted(env_classes)}')
