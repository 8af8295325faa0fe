"""Action-buffer interaction protocol and delay-augmented observations."""
from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from .core_mdp import ContractError


class ActionBuffer:
    """FIFO of the ``n`` committed-but-not-yet-executed actions."""

    def __init__(self, n: int, action_dim: int):
        if n < 0:
            raise ContractError(f"delay must be non-negative, got {n}")
        self.n = n
        self.action_dim = action_dim
        self._queue: deque[np.ndarray] = deque()

    def fill(self, actions: Sequence) -> None:
        actions = [np.asarray(a, dtype=np.float64).reshape(self.action_dim) for a in actions]
        if len(actions) != self.n:
            raise ContractError(f"buffer needs {self.n} initial actions, got {len(actions)}")
        self._queue = deque(a.copy() for a in actions)

    def push_pop(self, action) -> np.ndarray:
        """Append ``action`` and return the action that is due now.

        With ``n == 0`` the pushed action is returned immediately.
        """
        action = np.asarray(action, dtype=np.float64).reshape(self.action_dim).copy()
        self._queue.append(action)
        return self._queue.popleft()

    def pending(self) -> np.ndarray:
        """Queued actions, head first, shape ``(n, action_dim)``."""
        if not self._queue:
            return np.zeros((0, self.action_dim))
        return np.stack(list(self._queue))

    def __len__(self) -> int:
        return len(self._queue)


def augment(obs, pending) -> np.ndarray:
    """Concatenate an observation with the flattened pending-action queue."""
    return np.concatenate([np.asarray(obs, dtype=np.float64).ravel(),
                           np.asarray(pending, dtype=np.float64).ravel()])


def split_augmented(aug, obs_dim: int, action_dim: int) -> tuple[np.ndarray, np.ndarray]:
    aug = np.asarray(aug, dtype=np.float64)
    return aug[..., :obs_dim], aug[..., obs_dim:].reshape(*aug.shape[:-1], -1, action_dim)


def shift_augmented(aug, predicted_obs, new_action, obs_dim: int, action_dim: int) -> np.ndarray:
    """Replace the observation, drop the queue head and append ``new_action``.

    Works on single vectors or on batches (leading dims shared by all args).
    """
    aug = np.asarray(aug, dtype=np.float64)
    predicted_obs = np.asarray(predicted_obs, dtype=np.float64)
    new_action = np.asarray(new_action, dtype=np.float64)
    queue = aug[..., obs_dim:]
    if queue.shape[-1] == 0:
        return predicted_obs.copy()
    new_queue = np.concatenate([queue[..., action_dim:], new_action.reshape(*queue.shape[:-1], action_dim)], axis=-1)
    return np.concatenate([predicted_obs, new_queue], axis=-1)


class DelayedEnv:
    """Wraps a stateless environment behind an ``n``-step action buffer.

    The agent submits one action per step; the buffer releases the action
    submitted ``n`` steps earlier (initially the ``init_actions``) to the
    inner environment. Rewards are those of the executed action.
    """

    def __init__(self, env, n: int, init_actions: Sequence | None = None):
        self.env = env
        self.n = n
        self.spec = env.spec
        adim = env.spec.action_dim
        if init_actions is None:
            init_actions = [np.zeros(adim) for _ in range(n)]
        self.init_actions = [np.asarray(a, dtype=np.float64).reshape(adim) for a in init_actions]
        self.buffer = ActionBuffer(n, adim)
        self.buffer.fill(self.init_actions)
        self.state: np.ndarray | None = None
        self.executed: list[np.ndarray] = []

    @property
    def obs_dim(self) -> int:
        return self.spec.obs_dim

    @property
    def aug_dim(self) -> int:
        return self.spec.obs_dim + self.n * self.spec.action_dim

    def reset(self, seed=None) -> np.ndarray:
        self.state = self.env.reset(seed)
        self.buffer.fill(self.init_actions)
        self.executed = []
        return self.augmented()

    def observation(self) -> np.ndarray:
        if self.state is None:
            raise ContractError("call reset() before stepping a DelayedEnv")
        return self.env.observe(self.state)

    def pending(self) -> np.ndarray:
        return self.buffer.pending()

    def augmented(self) -> np.ndarray:
        return augment(self.observation(), self.pending())

    def step(self, new_action) -> tuple[np.ndarray, float, bool]:
        """Submit ``new_action``; execute the due action; return (augmented obs, reward, done)."""
        if self.state is None:
            raise ContractError("call reset() before stepping a DelayedEnv")
        due = self.buffer.push_pop(new_action)
        self.executed.append(due)
        self.state, reward, done = self.env.step(self.state, due)
        return self.augmented(), reward, done

    def last_executed(self) -> np.ndarray:
        return self.executed[-1]


def delayed_reset(env: DelayedEnv, seed=None) -> np.ndarray:
    return env.reset(seed)


def delayed_step(env: DelayedEnv, new_action) -> tuple[np.ndarray, float, bool]:
    return env.step(new_action)
