"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``DAMBRL_BACKEND``
(``"numba"`` or ``"numpy"``). ``numba`` is the default when it can be
imported. Both paths implement identical arithmetic; the test suite runs
them against each other.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:  # pragma: no cover - exercised implicitly when numba is installed
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("DAMBRL_BACKEND", "numba" if HAVE_NUMBA else "numpy").lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"DAMBRL_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"

# Pendulum constants are passed explicitly so tests can shrink dt.
PENDULUM_DEFAULTS = (10.0, 1.0, 1.0, 0.05, 8.0, 2.0)  # g, m, l, dt, max_speed, max_torque
CARTPOLE_DEFAULTS = (9.8, 1.0, 0.1, 0.5, 10.0, 0.02)  # g, m_cart, m_pole, half_length, force_mag, dt
CARTPOLE_THETA_LIMIT = 12.0 * 2.0 * math.pi / 360.0
CARTPOLE_X_LIMIT = 2.4


# --------------------------------------------------------------------------
# numpy reference implementations
# --------------------------------------------------------------------------

def wrap_angle_np(theta):
    """Map angles to (-pi, pi]."""
    out = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def pendulum_step_np(theta, theta_dot, torque, g, m, l, dt, max_speed, max_torque):
    u = np.clip(torque, -max_torque, max_torque)
    th = wrap_angle_np(theta)
    reward = -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u)
    new_theta_dot = theta_dot + (3.0 * g / (2.0 * l) * np.sin(theta) + 3.0 / (m * l * l) * u) * dt
    new_theta_dot = np.clip(new_theta_dot, -max_speed, max_speed)
    new_theta = wrap_angle_np(theta + new_theta_dot * dt)
    return new_theta, new_theta_dot, reward


def pendulum_obs_step_np(obs, torque, g, m, l, dt, max_speed, max_torque):
    theta = np.arctan2(obs[..., 1], obs[..., 0])
    th, thd, _ = pendulum_step_np(theta, obs[..., 2], torque, g, m, l, dt, max_speed, max_torque)
    return np.stack([np.cos(th), np.sin(th), thd], axis=-1)


def pendulum_obs_reward_np(obs, torque, max_torque):
    theta = np.arctan2(obs[..., 1], obs[..., 0])
    u = np.clip(torque, -max_torque, max_torque)
    return -(theta * theta + 0.1 * obs[..., 2] * obs[..., 2] + 0.001 * u * u)


def cartpole_step_np(state, action, g, m_cart, m_pole, half_length, force_mag, dt):
    x, x_dot, theta, theta_dot = (state[..., i] for i in range(4))
    force = force_mag * np.clip(action, -1.0, 1.0)
    total_mass = m_cart + m_pole
    pml = m_pole * half_length
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    temp = (force + pml * theta_dot * theta_dot * sin_t) / total_mass
    theta_acc = (g * sin_t - cos_t * temp) / (
        half_length * (4.0 / 3.0 - m_pole * cos_t * cos_t / total_mass)
    )
    x_acc = temp - pml * theta_acc * cos_t / total_mass
    return np.stack(
        [x + dt * x_dot, x_dot + dt * x_acc, theta + dt * theta_dot, theta_dot + dt * theta_acc],
        axis=-1,
    )


def cartpole_alive_np(state):
    return (np.abs(state[..., 0]) <= CARTPOLE_X_LIMIT) & (
        np.abs(state[..., 2]) <= CARTPOLE_THETA_LIMIT
    )


# --------------------------------------------------------------------------
# numba kernels (flat loops over rows)
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _wrap(theta):
        out = (theta + math.pi) % (2.0 * math.pi) - math.pi
        if out == -math.pi:
            out = math.pi
        return out

    @numba.njit(cache=True)
    def _pendulum_step_nb(theta, theta_dot, torque, g, m, l, dt, max_speed, max_torque):
        n = theta.shape[0]
        new_theta = np.empty(n)
        new_theta_dot = np.empty(n)
        reward = np.empty(n)
        for i in range(n):
            u = min(max(torque[i], -max_torque), max_torque)
            th = _wrap(theta[i])
            thd = theta_dot[i]
            reward[i] = -(th * th + 0.1 * thd * thd + 0.001 * u * u)
            nthd = thd + (3.0 * g / (2.0 * l) * math.sin(theta[i]) + 3.0 / (m * l * l) * u) * dt
            nthd = min(max(nthd, -max_speed), max_speed)
            new_theta_dot[i] = nthd
            new_theta[i] = _wrap(theta[i] + nthd * dt)
        return new_theta, new_theta_dot, reward

    @numba.njit(cache=True)
    def _pendulum_obs_step_nb(obs, torque, g, m, l, dt, max_speed, max_torque):
        n = obs.shape[0]
        out = np.empty((n, 3))
        for i in range(n):
            theta = math.atan2(obs[i, 1], obs[i, 0])
            thd = obs[i, 2]
            u = min(max(torque[i], -max_torque), max_torque)
            nthd = thd + (3.0 * g / (2.0 * l) * math.sin(theta) + 3.0 / (m * l * l) * u) * dt
            nthd = min(max(nthd, -max_speed), max_speed)
            nth = _wrap(theta + nthd * dt)
            out[i, 0] = math.cos(nth)
            out[i, 1] = math.sin(nth)
            out[i, 2] = nthd
        return out

    @numba.njit(cache=True)
    def _pendulum_obs_reward_nb(obs, torque, max_torque):
        n = obs.shape[0]
        out = np.empty(n)
        for i in range(n):
            theta = math.atan2(obs[i, 1], obs[i, 0])
            u = min(max(torque[i], -max_torque), max_torque)
            out[i] = -(theta * theta + 0.1 * obs[i, 2] * obs[i, 2] + 0.001 * u * u)
        return out

    @numba.njit(cache=True)
    def _cartpole_step_nb(state, action, g, m_cart, m_pole, half_length, force_mag, dt):
        n = state.shape[0]
        out = np.empty((n, 4))
        total_mass = m_cart + m_pole
        pml = m_pole * half_length
        for i in range(n):
            x = state[i, 0]
            x_dot = state[i, 1]
            theta = state[i, 2]
            theta_dot = state[i, 3]
            force = force_mag * min(max(action[i], -1.0), 1.0)
            cos_t = math.cos(theta)
            sin_t = math.sin(theta)
            temp = (force + pml * theta_dot * theta_dot * sin_t) / total_mass
            theta_acc = (g * sin_t - cos_t * temp) / (
                half_length * (4.0 / 3.0 - m_pole * cos_t * cos_t / total_mass)
            )
            x_acc = temp - pml * theta_acc * cos_t / total_mass
            out[i, 0] = x + dt * x_dot
            out[i, 1] = x_dot + dt * x_acc
            out[i, 2] = theta + dt * theta_dot
            out[i, 3] = theta_dot + dt * theta_acc
        return out

    @numba.njit(cache=True)
    def _cartpole_alive_nb(state, x_limit, theta_limit):
        n = state.shape[0]
        out = np.empty(n, dtype=np.bool_)
        for i in range(n):
            out[i] = abs(state[i, 0]) <= x_limit and abs(state[i, 2]) <= theta_limit
        return out


# --------------------------------------------------------------------------
# dispatch: accept arbitrary leading shapes, flatten for the numba loops
# --------------------------------------------------------------------------

def _flat(a, trailing):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if trailing:
        return a.reshape(-1, trailing)
    return a.reshape(-1)


def pendulum_step(theta, theta_dot, torque, params=PENDULUM_DEFAULTS, backend=None):
    backend = backend or BACKEND
    theta = np.asarray(theta, dtype=np.float64)
    if backend == "numpy":
        return pendulum_step_np(theta, np.asarray(theta_dot, np.float64), np.asarray(torque, np.float64), *params)
    shape = np.broadcast(theta, np.asarray(theta_dot), np.asarray(torque)).shape
    th, thd, tq = (np.broadcast_to(v, shape) for v in (theta, theta_dot, torque))
    outs = _pendulum_step_nb(_flat(th, 0), _flat(thd, 0), _flat(tq, 0), *params)
    return tuple(o.reshape(shape) for o in outs)


def pendulum_obs_step(obs, torque, params=PENDULUM_DEFAULTS, backend=None):
    backend = backend or BACKEND
    obs = np.asarray(obs, dtype=np.float64)
    torque = np.asarray(torque, dtype=np.float64)
    if backend == "numpy":
        return pendulum_obs_step_np(obs, torque, *params)
    lead = obs.shape[:-1]
    tq = np.broadcast_to(torque, lead)
    return _pendulum_obs_step_nb(_flat(obs, 3), _flat(tq, 0), *params).reshape(obs.shape)


def pendulum_obs_reward(obs, torque, max_torque=PENDULUM_DEFAULTS[5], backend=None):
    backend = backend or BACKEND
    obs = np.asarray(obs, dtype=np.float64)
    torque = np.asarray(torque, dtype=np.float64)
    if backend == "numpy" or obs.ndim == 1:
        return pendulum_obs_reward_np(obs, torque, max_torque)
    lead = obs.shape[:-1]
    tq = np.broadcast_to(torque, lead)
    return _pendulum_obs_reward_nb(_flat(obs, 3), _flat(tq, 0), max_torque).reshape(lead)


def cartpole_step(state, action, params=CARTPOLE_DEFAULTS, backend=None):
    backend = backend or BACKEND
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if backend == "numpy" or state.ndim == 1:
        return cartpole_step_np(state, action, *params)
    lead = state.shape[:-1]
    act = np.broadcast_to(action, lead)
    return _cartpole_step_nb(_flat(state, 4), _flat(act, 0), *params).reshape(state.shape)


def cartpole_alive(state, backend=None):
    backend = backend or BACKEND
    state = np.asarray(state, dtype=np.float64)
    if backend == "numpy" or state.ndim == 1:
        return cartpole_alive_np(state)
    lead = state.shape[:-1]
    return _cartpole_alive_nb(_flat(state, 4), CARTPOLE_X_LIMIT, CARTPOLE_THETA_LIMIT).reshape(lead)
