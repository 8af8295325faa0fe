"""Outer training loops: DATS, the blind-PETS and W-PETS baselines, and an oracle.

Every agent interacts with a :class:`~dambrl.delay.DelayedEnv`. They differ
only in what they learn and how they plan:

========== ============================================ ===============================
kind       model data                                   planning
========== ============================================ ===============================
DATS       (obs_t, executed a_t, obs_t+1)               roll particles through the
                                                        pending queue, then CEM
BlindPets  (obs_t, submitted a_t, obs_t+1)              CEM from obs_t, queue ignored
WPets      (aug_t, submitted a_t, aug_t+1)              CEM in augmented space over
                                                        n + m steps
OracleDats none, true simulator                         as DATS
========== ============================================ ===============================

Trial 0 always uses a uniform random controller.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core_mdp import ContractError
from .delay import DelayedEnv, augment
from .model import (EnsembleDynamicsModel, ReplayBuffer, TrainConfig, TrueDynamicsModel,
                    train as train_model)
from .planner import CemConfig, MpcController


class AgentKind(str, enum.Enum):
    DATS = "dats"
    BLIND_PETS = "blind_pets"
    WPETS = "wpets"
    ORACLE_DATS = "oracle_dats"


@dataclass
class AgentConfig:
    trials: int = 15
    ensemble_size: int = 5
    hidden: tuple[int, ...] = (200, 200, 200)
    train: TrainConfig = field(default_factory=TrainConfig)
    cem: CemConfig = field(default_factory=CemConfig)


@dataclass
class TrialResult:
    trial: int
    episode_return: float
    transitions: int
    wall_time: float
    nll: float = float("nan")


@dataclass
class RunResult:
    kind: AgentKind
    delay: int
    model: object
    trials: list[TrialResult]
    buffer: ReplayBuffer

    @property
    def returns(self) -> np.ndarray:
        return np.array([t.episode_return for t in self.trials])

    @property
    def total_transitions(self) -> int:
        return sum(t.transitions for t in self.trials)


def _random_policy(env: DelayedEnv) -> Callable:
    low, high = env.spec.action_low, env.spec.action_high

    def policy(obs, pending, rng):
        return rng.uniform(low, high)

    return policy


def run_episode(env: DelayedEnv, policy: Callable, rng: np.random.Generator, record: Callable | None = None,
                reset_seed: int | None = None) -> tuple[float, int]:
    """Roll one episode of at most ``horizon`` submitted actions.

    ``record(obs, aug, submitted, executed, next_obs, next_aug)`` is called
    after every executed step. The last ``n`` submissions can never execute,
    so they are zeros rather than planned. Returns (episode return, steps executed).
    """
    if reset_seed is None:
        reset_seed = int(rng.integers(2**62))
    env.reset(reset_seed)
    total = 0.0
    steps = 0
    horizon = env.spec.horizon
    for t in range(horizon):
        obs = env.observation()
        aug = env.augmented()
        if t < horizon - env.n:
            action = np.asarray(policy(obs, env.pending(), rng), dtype=np.float64)
        else:
            action = np.zeros(env.spec.action_dim)
        next_aug, reward, done = env.step(action)
        total += reward
        steps += 1
        if record is not None:
            record(obs, aug, action, env.last_executed(), env.observation(), next_aug)
        if done:
            break
    return total, steps


def _augmented_reward(env: DelayedEnv):
    obs_dim = env.spec.obs_dim

    def reward(aug_state, action):
        return env.env.reward_fn(aug_state[..., :obs_dim], action)

    return reward


def _run(kind: AgentKind, env: DelayedEnv, config: AgentConfig, rng: np.random.Generator,
         trials: int | None = None, log: Callable[[TrialResult], None] | None = None,
         rollout_dtype=np.float32) -> RunResult:
    kind = AgentKind(kind)
    trials = config.trials if trials is None else trials
    if trials < 1:
        raise ContractError("need at least one trial")
    spec, n = env.spec, env.n
    low, high = spec.action_low, spec.action_high
    cem = config.cem

    if kind is AgentKind.WPETS:
        data_dim = env.aug_dim
        reward_fn = _augmented_reward(env)
        horizon = cem.horizon + n
    else:
        data_dim = spec.obs_dim
        reward_fn = env.env.reward_fn
        horizon = cem.horizon
    buffer = ReplayBuffer(data_dim, spec.action_dim)

    if kind is AgentKind.ORACLE_DATS:
        model = TrueDynamicsModel(env.env)
        cem = CemConfig(**{**cem.__dict__, "particles": 1})
    else:
        model = EnsembleDynamicsModel.create(data_dim, spec.action_dim, rng,
                                             ensemble_size=config.ensemble_size, hidden=list(config.hidden))
        model.rollout_dtype = rollout_dtype
    controller = MpcController(model, cem, reward_fn, low, high, horizon=horizon)

    def record(obs, aug, submitted, executed, next_obs, next_aug):
        if kind is AgentKind.WPETS:
            buffer.add(aug, submitted, next_aug)
        elif kind is AgentKind.BLIND_PETS:
            buffer.add(obs, submitted, next_obs)
        else:
            buffer.add(obs, executed, next_obs)

    if kind is AgentKind.DATS or kind is AgentKind.ORACLE_DATS:
        def plan(obs, pending, rng):
            return controller.act(obs, pending, rng)
    elif kind is AgentKind.BLIND_PETS:
        def plan(obs, pending, rng):
            return controller.act(obs, np.zeros((0, spec.action_dim)), rng)
    else:
        def plan(obs, pending, rng):
            return controller.act(augment(obs, pending), np.zeros((0, spec.action_dim)), rng)

    results = []
    for k in range(trials):
        t0 = time.perf_counter()
        nll = float("nan")
        if k == 0 and kind is not AgentKind.ORACLE_DATS:
            policy = _random_policy(env)
        else:
            if kind is not AgentKind.ORACLE_DATS:
                report = train_model(model, buffer, rng, config.train)
                nll = float(np.mean(report.final_nll))
            controller.reset()
            policy = plan
        ret, steps = run_episode(env, policy, rng, record)
        result = TrialResult(k, float(ret), steps, time.perf_counter() - t0, nll)
        results.append(result)
        if log is not None:
            log(result)
    return RunResult(kind, n, model, results, buffer)


def run_dats(env: DelayedEnv, config: AgentConfig, rng: np.random.Generator, trials: int | None = None,
             log=None, rollout_dtype=np.float32) -> RunResult:
    """Delay-aware trajectory sampling: learn the undelayed dynamics, plan through the queue."""
    return _run(AgentKind.DATS, env, config, rng, trials, log, rollout_dtype)


def run_blind_pets(env: DelayedEnv, config: AgentConfig, rng: np.random.Generator, trials: int | None = None,
                   log=None, rollout_dtype=np.float32) -> RunResult:
    return _run(AgentKind.BLIND_PETS, env, config, rng, trials, log, rollout_dtype)


def run_wpets(env: DelayedEnv, config: AgentConfig, rng: np.random.Generator, trials: int | None = None,
              log=None, rollout_dtype=np.float32) -> RunResult:
    return _run(AgentKind.WPETS, env, config, rng, trials, log, rollout_dtype)


def run_oracle_dats(env: DelayedEnv, config: AgentConfig, rng: np.random.Generator, trials: int | None = None,
                    log=None, rollout_dtype=np.float32) -> RunResult:
    """DATS planning with the true simulator as the model; no learning."""
    return _run(AgentKind.ORACLE_DATS, env, config, rng, trials, log, rollout_dtype)


RUNNERS = {
    AgentKind.DATS: run_dats,
    AgentKind.BLIND_PETS: run_blind_pets,
    AgentKind.WPETS: run_wpets,
    AgentKind.ORACLE_DATS: run_oracle_dats,
}


def _run_oracle_episode(env: DelayedEnv, cem: CemConfig, rng: np.random.Generator, reset_seed: int) -> float:
    """One oracle-DATS episode from a fixed start state (single particle; the simulator is deterministic)."""
    cem = CemConfig(**{**cem.__dict__, "particles": 1})
    controller = MpcController(TrueDynamicsModel(env.env), cem, env.env.reward_fn,
                               env.spec.action_low, env.spec.action_high)

    def policy(obs, pending, rng):
        return controller.act(obs, pending, rng)

    ret, _ = run_episode(env, policy, rng, reset_seed=reset_seed)
    return ret


def evaluate_transfer(model, env: DelayedEnv, episodes: int, cem: CemConfig,
                      rng: np.random.Generator) -> tuple[float, float, np.ndarray]:
    """Frozen-model DATS planning at the env's delay; returns (mean, std, returns)."""
    if model.obs_dim != env.spec.obs_dim or model.action_dim != env.spec.action_dim:
        raise ContractError(
            f"model dims ({model.obs_dim}, {model.action_dim}) do not match env "
            f"({env.spec.obs_dim}, {env.spec.action_dim})"
        )
    controller = MpcController(model, cem, env.env.reward_fn, env.spec.action_low, env.spec.action_high)

    def policy(obs, pending, rng):
        return controller.act(obs, pending, rng)

    returns = []
    for _ in range(episodes):
        controller.reset()
        ret, _ = run_episode(env, policy, rng)
        returns.append(ret)
    returns = np.array(returns)
    return float(returns.mean()), float(returns.std()), returns


def model_residual(model, buffer: ReplayBuffer) -> float:
    """Root-mean-square one-step error of the model's mean prediction on ``buffer``."""
    pred = model.predict_mean(buffer.obs, buffer.actions)
    return float(np.sqrt(np.mean((pred - buffer.next_obs) ** 2)))
