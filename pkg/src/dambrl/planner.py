"""Delay-aware MPC: CEM over future actions, scored by trajectory sampling.

Particles are first rolled through the already-committed action queue (the
*prefix*), which gives a spread of estimates of the state at which the newly
chosen action will actually execute. Candidate sequences are then rolled out
from those estimates. Particle ``p`` is propagated by ensemble member
``p % B`` for its whole lifetime.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .core_mdp import ContractError

RewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
FAIL_VALUE = -1e10


@dataclass
class CemConfig:
    population: int = 400
    elites: int = 40
    iterations: int = 5
    horizon: int = 25
    alpha: float = 0.1
    init_std_fraction: float = 0.25  # initial stddev as a fraction of the bound width
    std_floor: float = 1e-3
    particles: int = 20
    prefix_rewards: bool = True

    def __post_init__(self):
        if not 1 <= self.elites <= self.population:
            raise ContractError(f"need 1 <= elites <= population, got {self.elites}/{self.population}")
        if self.horizon < 1 or self.iterations < 1 or self.particles < 1:
            raise ContractError("horizon, iterations and particles must be >= 1")
        if self.std_floor <= 0:
            raise ContractError("std_floor must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ContractError("alpha must lie in [0, 1)")


@dataclass
class CemState:
    mean: np.ndarray
    std: np.ndarray
    best_sequence: np.ndarray | None = None
    best_value: float = -np.inf
    value_trace: list[float] = field(default_factory=list)


@dataclass
class RolloutEval:
    sequence: np.ndarray
    value: float


@dataclass
class PlanResult:
    action: np.ndarray
    sequence: np.ndarray
    state: CemState


# --------------------------------------------------------------------------
# particle propagation
# --------------------------------------------------------------------------

def member_groups(n_particles: int, n_members: int) -> list[np.ndarray]:
    """Particle indices owned by each member under round-robin assignment."""
    return [np.arange(b, n_particles, n_members) for b in range(n_members)]


def _step_particles(model, obs: np.ndarray, actions: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """One model step for particles laid out ``(C, P, d)``.

    Rows are regrouped member-major (padding members that own one particle
    fewer) so the whole ensemble runs as one batched forward pass.
    """
    C, P, d = obs.shape
    B = model.n_members
    if B == 1:
        return model.sample_next(obs.reshape(1, C * P, d), actions.reshape(1, C * P, -1),
                                 noise.reshape(1, C * P, d)).reshape(C, P, d)
    L = -(-P // B)
    idx = np.empty((B, L), dtype=np.int64)
    for b, g in enumerate(member_groups(P, B)):
        idx[b, :len(g)] = g
        idx[b, len(g):] = g[-1] if len(g) else 0
    def gather(x):
        # (C, P, k) -> (B, C*L, k)
        return x[:, idx, :].transpose(1, 0, 2, 3).reshape(B, C * L, x.shape[-1])
    out = model.sample_next(gather(obs), gather(actions), gather(noise))
    out = out.reshape(B, C, L, d).transpose(1, 0, 2, 3)
    result = np.empty_like(obs)
    for b, g in enumerate(member_groups(P, B)):
        result[:, g, :] = out[:, b, :len(g), :]
    return result


def propagate_prefix(model, obs, pending, n_particles: int, rng: np.random.Generator,
                     reward_fn: RewardFn | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Roll ``n_particles`` copies of ``obs`` through the pending actions.

    Returns ``(particles (P, obs_dim), prefix_reward (P,))``; the reward is
    accumulated on each predicted state (zeros if ``reward_fn`` is None).
    """
    obs = np.asarray(obs, dtype=np.float64)
    pending = np.asarray(pending, dtype=np.float64).reshape(-1, model.action_dim)
    particles = np.broadcast_to(obs, (1, n_particles, obs.shape[-1])).copy()
    total = np.zeros((1, n_particles))
    for a in pending:
        act = np.broadcast_to(a, (1, n_particles, a.shape[-1]))
        particles = _step_particles(model, particles, act, rng.standard_normal(particles.shape))
        if reward_fn is not None:
            total += reward_fn(particles, act)
    return particles[0], total[0]


def evaluate_sequence(model, particles, candidates, reward_fn: RewardFn, rng: np.random.Generator,
                      prefix_reward=None):
    """Mean-over-particles return of each candidate action sequence.

    ``candidates`` is ``(m, a)`` for one sequence or ``(C, m, a)`` for a
    population; every candidate starts from the same particle set. Rewards
    are taken on each predicted state paired with the action that produced
    it. One ``(m, P, obs_dim)`` noise block is drawn per call and shared by
    all candidates (common random numbers), so a candidate's value does not
    depend on which other candidates are evaluated with it and a population
    split across workers with identically seeded rngs reproduces the serial
    elites.
    """
    cand = np.asarray(candidates, dtype=np.float64)
    single = cand.ndim == 2
    if single:
        cand = cand[None]
    C, m, _ = cand.shape
    particles = np.asarray(particles, dtype=np.float64)
    P, d = particles.shape
    state = np.broadcast_to(particles, (C, P, d)).copy()
    total = np.zeros((C, P))
    if prefix_reward is not None:
        total += np.asarray(prefix_reward)[None, :]
    noise = rng.standard_normal((m, P, d))
    for t in range(m):
        act = np.broadcast_to(cand[:, t, None, :], (C, P, cand.shape[-1]))
        state = _step_particles(model, state, act, np.broadcast_to(noise[t], (C, P, d)))
        total += reward_fn(state, act)
    values = np.nan_to_num(total.mean(axis=1), nan=FAIL_VALUE, neginf=FAIL_VALUE, posinf=FAIL_VALUE)
    if single:
        return RolloutEval(cand[0], float(values[0]))
    return values


# --------------------------------------------------------------------------
# cross-entropy method
# --------------------------------------------------------------------------

def sample_truncated(rng: np.random.Generator, mean, std, low, high, size: int) -> np.ndarray:
    """``size`` draws from N(mean, std) truncated to [low, high] (inverse-CDF)."""
    lo = ndtr((low - mean) / std)
    hi = ndtr((high - mean) / std)
    u = rng.uniform(size=(size,) + mean.shape)
    z = ndtri(lo + u * (hi - lo))
    x = mean + std * z
    x = np.where(np.isfinite(x), x, mean)
    return np.clip(x, low, high)


def cem_optimize(objective: Callable[[np.ndarray], np.ndarray], mean0, std0, low, high,
                 config: CemConfig, rng: np.random.Generator) -> CemState:
    """Maximise ``objective`` over ``(m, a)`` sequences.

    ``objective`` maps a ``(C, m, a)`` population to ``(C,)`` values. The
    sampling distribution is refit to the elites with smoothing ``alpha``;
    the best sequence seen in any iteration is retained.
    """
    state = CemState(np.array(mean0, dtype=np.float64), np.maximum(np.array(std0, dtype=np.float64), config.std_floor))
    for _ in range(config.iterations):
        pop = sample_truncated(rng, state.mean, state.std, low, high, config.population)
        values = np.asarray(objective(pop), dtype=np.float64)
        order = np.argsort(-values, kind="stable")
        elites = pop[order[:config.elites]]
        a = config.alpha
        state.mean = np.clip(a * state.mean + (1 - a) * elites.mean(axis=0), low, high)
        state.std = np.maximum(a * state.std + (1 - a) * elites.std(axis=0), config.std_floor)
        top = float(values[order[0]])
        if state.best_sequence is None or top > state.best_value:
            state.best_value = top
            state.best_sequence = pop[order[0]].copy()
        state.value_trace.append(state.best_value)
    return state


def cem_plan(model, obs, pending, config: CemConfig, reward_fn: RewardFn, low, high,
             rng: np.random.Generator, warm_start=None, horizon: int | None = None) -> PlanResult:
    """Plan the action that will execute after the pending queue drains."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    m = config.horizon if horizon is None else horizon
    a_dim = low.shape[0]
    mean0 = np.zeros((m, a_dim)) if warm_start is None else np.asarray(warm_start, dtype=np.float64)
    if mean0.shape != (m, a_dim):
        raise ContractError(f"warm start shape {mean0.shape} != {(m, a_dim)}")
    std0 = np.broadcast_to(config.init_std_fraction * (high - low), (m, a_dim))

    particles, prefix_r = propagate_prefix(model, obs, pending, config.particles, rng,
                                           reward_fn if config.prefix_rewards else None)
    prefix = prefix_r if config.prefix_rewards else None

    def objective(pop):
        return evaluate_sequence(model, particles, pop, reward_fn, rng, prefix)

    state = cem_optimize(objective, mean0, std0, low, high, config, rng)
    seq = state.best_sequence
    return PlanResult(np.clip(seq[0], low, high), seq, state)


def shift_warm_start(mean: np.ndarray) -> np.ndarray:
    """Receding-horizon warm start: drop the first slot, pad with zeros."""
    return np.concatenate([mean[1:], np.zeros_like(mean[:1])])


class MpcController:
    """Receding-horizon CEM controller with warm starting."""

    def __init__(self, model, config: CemConfig, reward_fn: RewardFn, low, high, horizon: int | None = None):
        self.model = model
        self.config = config
        self.reward_fn = reward_fn
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.horizon = config.horizon if horizon is None else horizon
        self._warm = None

    def reset(self) -> None:
        self._warm = None

    def act(self, obs, pending, rng: np.random.Generator) -> np.ndarray:
        result = cem_plan(self.model, obs, pending, self.config, self.reward_fn, self.low, self.high,
                          rng, warm_start=self._warm, horizon=self.horizon)
        self._warm = shift_warm_start(result.state.mean)
        return result.action
