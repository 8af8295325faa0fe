"""Deterministic classic-control environments with known reward functions.

Environments are stateless: ``step`` maps ``(state, action)`` to the next
state, so the same instance can be shared. Reward functions are exposed
separately (``reward_fn``) because the planner evaluates them on predicted
observations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core_mdp import ContractError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    obs_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    dt: float

    def __post_init__(self):
        if self.horizon <= 0 or self.dt <= 0:
            raise ContractError("horizon and dt must be positive")


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ContractError("non-finite state or action")


def wrap_angle(theta: float) -> float:
    """Wrap a scalar angle to (-pi, pi]."""
    out = math.fmod(theta + math.pi, 2.0 * math.pi)
    if out < 0.0:
        out += 2.0 * math.pi
    out -= math.pi
    return math.pi if out == -math.pi else out


class Pendulum:
    """Torque-limited swing-up pendulum, angle measured from upright.

    State is ``(theta, theta_dot)``; observations are
    ``(cos theta, sin theta, theta_dot)``.
    """

    name = "pendulum"

    def __init__(self, g: float = 10.0, m: float = 1.0, l: float = 1.0, dt: float = 0.05,
                 max_speed: float = 8.0, max_torque: float = 2.0, horizon: int = 200):
        self.g, self.m, self.l, self.dt = g, m, l, dt
        self.max_speed, self.max_torque = max_speed, max_torque
        self.params = (g, m, l, dt, max_speed, max_torque)
        self.spec = EnvSpec(
            name=self.name, state_dim=2, obs_dim=3, action_dim=1,
            action_low=np.array([-max_torque]), action_high=np.array([max_torque]),
            horizon=horizon, dt=dt,
        )

    def reset(self, seed=None) -> np.ndarray:
        rng = _as_rng(seed)
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    def step(self, state, action) -> tuple[np.ndarray, float, bool]:
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        _finite(state, action)
        theta, theta_dot = float(state[0]), float(state[1])
        u = min(max(float(action[0]), -self.max_torque), self.max_torque)
        th = wrap_angle(theta)
        reward = -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u)
        new_theta_dot = theta_dot + (
            3.0 * self.g / (2.0 * self.l) * math.sin(theta) + 3.0 / (self.m * self.l**2) * u
        ) * self.dt
        new_theta_dot = min(max(new_theta_dot, -self.max_speed), self.max_speed)
        new_theta = wrap_angle(theta + new_theta_dot * self.dt)
        return np.array([new_theta, new_theta_dot]), reward, False

    def observe(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        return np.stack([np.cos(state[..., 0]), np.sin(state[..., 0]), state[..., 1]], axis=-1)

    def reward_fn(self, obs, action):
        """Step reward recovered from an observation; broadcasts over leading dims."""
        action = np.asarray(action, dtype=np.float64)
        return K.pendulum_obs_reward(obs, action[..., 0], self.max_torque)

    def obs_step(self, obs, action):
        """True one-step dynamics in observation space (oracle model hook)."""
        action = np.asarray(action, dtype=np.float64)
        return K.pendulum_obs_step(obs, action[..., 0], self.params)

    def energy(self, state) -> float:
        """Mechanical energy per unit inertia, conserved by the torque-free flow."""
        theta, theta_dot = state
        return 0.5 * theta_dot**2 + 1.5 * self.g / self.l * math.cos(theta)


class CartPole:
    """Continuous-action cart-pole; action in [-1, 1] scales a +-10 N force.

    State and observation are ``(x, x_dot, theta, theta_dot)``.
    """

    name = "cartpole"
    theta_limit = K.CARTPOLE_THETA_LIMIT
    x_limit = K.CARTPOLE_X_LIMIT

    def __init__(self, horizon: int = 200):
        self.params = K.CARTPOLE_DEFAULTS
        self.spec = EnvSpec(
            name=self.name, state_dim=4, obs_dim=4, action_dim=1,
            action_low=np.array([-1.0]), action_high=np.array([1.0]),
            horizon=horizon, dt=self.params[5],
        )

    def reset(self, seed=None) -> np.ndarray:
        return _as_rng(seed).uniform(-0.05, 0.05, size=4)

    def alive(self, state) -> bool:
        return abs(state[0]) <= self.x_limit and abs(state[2]) <= self.theta_limit

    def step(self, state, action) -> tuple[np.ndarray, float, bool]:
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        _finite(state, action)
        reward = 1.0 if self.alive(state) else 0.0
        nxt = K.cartpole_step_np(state, action[0], *self.params)
        return nxt, reward, not self.alive(nxt)

    def observe(self, state) -> np.ndarray:
        return np.array(state, dtype=np.float64, copy=True)

    def reward_fn(self, obs, action):
        return K.cartpole_alive(obs).astype(np.float64)

    def obs_step(self, obs, action):
        action = np.asarray(action, dtype=np.float64)
        return K.cartpole_step(obs, action[..., 0], self.params)


ENVS = {"pendulum": Pendulum, "cartpole": CartPole}


def make_env(name: str, **kwargs):
    try:
        return ENVS[name](**kwargs)
    except KeyError:
        raise ContractError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None
