import numpy as np
import pytest

from dambrl.agent import (AgentConfig, AgentKind, RUNNERS, evaluate_transfer, model_residual, run_blind_pets,
                          run_dats, run_episode, run_wpets)
from dambrl.core_mdp import ContractError
from dambrl.delay import DelayedEnv
from dambrl.envs import CartPole, Pendulum
from dambrl.model import EnsembleDynamicsModel, TrainConfig
from dambrl.planner import CemConfig

TINY = AgentConfig(trials=2, ensemble_size=2, hidden=(16,), train=TrainConfig(epochs=3),
                   cem=CemConfig(population=16, elites=4, iterations=2, horizon=4, particles=2))


def test_single_trial_is_random_only():
    res = run_dats(DelayedEnv(Pendulum(horizon=50), 1), TINY, np.random.default_rng(0), trials=1)
    assert len(res.trials) == 1 and np.isnan(res.trials[0].nll)
    assert res.model.history == []


def test_transition_count_is_k_times_t():
    res = run_dats(DelayedEnv(Pendulum(horizon=40), 2), TINY, np.random.default_rng(0), trials=3)
    assert len(res.buffer) == 3 * 40 == res.total_transitions
    assert all(t.transitions == 40 for t in res.trials)


@pytest.mark.parametrize("runner", [run_blind_pets, run_wpets])
def test_baselines_equal_dats_at_n0(runner):
    env = lambda: DelayedEnv(Pendulum(horizon=30), 0)
    a = run_dats(env(), TINY, np.random.default_rng(5), trials=3)
    b = runner(env(), TINY, np.random.default_rng(5), trials=3)
    np.testing.assert_array_equal(a.returns, b.returns)
    np.testing.assert_array_equal(a.buffer.obs, b.buffer.obs)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_wpets_input_dim_grows_with_delay(n):
    res = run_wpets(DelayedEnv(Pendulum(horizon=20), n), TINY, np.random.default_rng(0), trials=1)
    assert res.model.params.layer_sizes[0] == 3 + n + 1
    assert res.buffer.obs.shape[1] == 3 + n


def test_blind_residual_exceeds_dats():
    cfg = AgentConfig(trials=2, ensemble_size=2, hidden=(32, 32), train=TrainConfig(epochs=30),
                      cem=CemConfig(population=16, elites=4, iterations=2, horizon=4, particles=2))
    d = run_dats(DelayedEnv(Pendulum(horizon=150), 1), cfg, np.random.default_rng(1))
    b = run_blind_pets(DelayedEnv(Pendulum(horizon=150), 1), cfg, np.random.default_rng(1))
    from dambrl.model import train
    for res in (d, b):
        train(res.model, res.buffer, np.random.default_rng(2), cfg.train)
    assert model_residual(b.model, b.buffer) > model_residual(d.model, d.buffer)


def test_cartpole_episode_stops_on_termination():
    env = DelayedEnv(CartPole(), 1)
    ret, steps = run_episode(env, lambda o, p, r: np.ones(1), np.random.default_rng(0))
    assert steps < 200 and ret <= steps


def test_runners_cover_kinds():
    assert set(RUNNERS) == set(AgentKind)
    with pytest.raises(ContractError):
        run_dats(DelayedEnv(Pendulum(), 1), TINY, np.random.default_rng(0), trials=0)


def test_transfer_dim_mismatch(rng):
    model = EnsembleDynamicsModel.create(4, 1, rng, 2, [8])
    with pytest.raises(ContractError):
        evaluate_transfer(model, DelayedEnv(Pendulum(), 1), 1, TINY.cem, rng)


def test_run_is_seed_deterministic():
    a = run_dats(DelayedEnv(Pendulum(horizon=30), 1), TINY, np.random.default_rng(9))
    b = run_dats(DelayedEnv(Pendulum(horizon=30), 1), TINY, np.random.default_rng(9))
    np.testing.assert_array_equal(a.returns, b.returns)
