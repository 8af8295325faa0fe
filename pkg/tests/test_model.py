import numpy as np
import pytest

from dambrl import neural as N
from dambrl.agent import AgentConfig, evaluate_transfer, run_dats
from dambrl.core_mdp import ContractError
from dambrl.delay import DelayedEnv
from dambrl.envs import Pendulum
from dambrl.model import (CHECKPOINT_VERSION, EnsembleDynamicsModel, Normalizer, ReplayBuffer, TrainConfig,
                          load_model, predict_mean, predict_sample, save_model, train, training_arrays)
from dambrl.planner import CemConfig


def pendulum_pairs(n, rng, max_speed=6.0):
    env = Pendulum()
    s = np.stack([rng.uniform(-np.pi, np.pi, n), rng.uniform(-max_speed, max_speed, n)], -1)
    o = env.observe(s)
    u = rng.uniform(-2, 2, (n, 1))
    return o, u, env.obs_step(o, u)


@pytest.fixture(scope="module")
def pendulum_model():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(3, 1)
    buf.add_batch(*pendulum_pairs(3000, rng))
    model = EnsembleDynamicsModel.create(3, 1, rng, 5, [64, 64])
    report = train(model, buf, rng, TrainConfig(epochs=50))
    return model, buf, report


def test_linear_system_fit():
    rng = np.random.default_rng(1)
    s = rng.uniform(-1, 1, (1000, 2))
    a = rng.uniform(-1, 1, (1000, 2))
    buf = ReplayBuffer(2, 2)
    buf.add_batch(s, a, s + a)
    model = EnsembleDynamicsModel.create(2, 2, rng, 2, [32, 32])
    train(model, buf, rng, TrainConfig(epochs=100, patience=100))
    s2, a2 = rng.uniform(-1, 1, (200, 2)), rng.uniform(-1, 1, (200, 2))
    err = (model.predict_mean(s2, a2) - (s2 + a2)) / model.target_norm.std
    assert np.sqrt(np.mean(err**2)) < 1e-2


def test_members_see_different_bootstraps(pendulum_model):
    model, _, _ = pendulum_model
    assert not np.allclose(model.params.member(0).flat(), model.params.member(1).flat())


def test_nll_decreases_per_member_on_sin():
    rng = np.random.default_rng(2)
    x = rng.uniform(-3, 3, (1000, 1))
    buf = ReplayBuffer(1, 1)
    buf.add_batch(x, np.zeros_like(x), x + np.sin(x) + 0.1 * rng.standard_normal(x.shape))
    model = EnsembleDynamicsModel.create(1, 1, rng, 3, [32, 32])
    report = train(model, buf, rng, TrainConfig(epochs=15))
    assert np.all(report.nll_curve[0] - report.final_nll > 0.1)


def test_normalised_inputs_are_standardised(pendulum_model):
    model, buf, _ = pendulum_model
    x = model.input_norm.apply(training_arrays(buf)[0])
    assert np.all(np.abs(x.mean(0)) < 1e-6)
    assert np.all(np.abs(x.std(0) - 1) < 1e-6)


def test_normaliser_std_floor():
    norm = Normalizer.fit(np.ones((10, 3)))
    assert np.all(norm.std >= 1e-8)


def test_predict_mean_held_out(pendulum_model):
    model, _, _ = pendulum_model
    o, u, o2 = pendulum_pairs(1000, np.random.default_rng(99))
    err = np.abs(predict_mean(model, o, u) - o2)
    assert err.mean() < 0.05
    assert np.percentile(err.max(axis=1), 95) < 0.05


def test_predict_sample_zero_variance_hook(pendulum_model):
    model, _, _ = pendulum_model
    model.noise_scale = 0.0
    try:
        o, u, _ = pendulum_pairs(5, np.random.default_rng(3))
        mean, _ = model.predict_moments(o, u, 2)
        np.testing.assert_allclose(predict_sample(model, o, u, 2, np.random.default_rng(0)), mean, atol=1e-12)
    finally:
        model.noise_scale = 1.0


def test_predict_sample_seeded(pendulum_model):
    model, _, _ = pendulum_model
    o, u, _ = pendulum_pairs(4, np.random.default_rng(3))
    a = predict_sample(model, o, u, [0, 1, 2, 3], np.random.default_rng(5))
    b = predict_sample(model, o, u, [0, 1, 2, 3], np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ContractError):
        predict_sample(model, o, u, 5, np.random.default_rng(5))


def test_predict_sample_monte_carlo(pendulum_model):
    model, _, _ = pendulum_model
    o = np.array([0.3, 0.95, 1.0]) / np.array([1, 1, 1])
    o[:2] /= np.linalg.norm(o[:2])
    u = np.array([0.5])
    k = 10_000
    samples = predict_sample(model, np.tile(o, (k, 1)), np.tile(u, (k, 1)), 1, np.random.default_rng(8))
    mean, std = model.predict_moments(o, u, 1)
    se = std[0] / np.sqrt(k)
    assert np.all(np.abs(samples.mean(0) - mean[0]) < 3 * se + 1e-15)
    assert np.all(np.abs(samples.std(0) - std[0]) < 3 * std[0] / np.sqrt(2 * k))


def test_predict_mean_single_member_and_copies(rng):
    model = EnsembleDynamicsModel.create(3, 1, rng, 1, [8])
    o, u = rng.standard_normal((6, 3)), rng.standard_normal((6, 1))
    mean, _ = model.predict_moments(o, u, 0)
    np.testing.assert_allclose(model.predict_mean(o, u), mean, atol=1e-14)
    ens = EnsembleDynamicsModel.create(3, 1, rng, 4, [8])
    ens.params = N.MlpParams.from_arrays([np.repeat(a[None], 4, 0) for a in model.params.member(0).arrays()])
    np.testing.assert_allclose(ens.predict_mean(o, u), mean, atol=1e-14)


def test_rollout_precision(pendulum_model):
    model, _, _ = pendulum_model
    rng = np.random.default_rng(4)
    o, u, _ = pendulum_pairs(50, rng)
    noise = rng.standard_normal((5, 10, 3))
    args = (np.tile(o[:10], (5, 1, 1)), np.tile(u[:10], (5, 1, 1)), noise)
    model.rollout_dtype = np.float64
    exact = model.sample_next(*args)
    model.rollout_dtype = np.float32
    fast = model.sample_next(*args)
    assert exact.dtype == fast.dtype == np.float64
    np.testing.assert_allclose(fast, exact, atol=1e-4)
    # float64 path agrees with per-member predict_sample arithmetic
    member0 = model.predict_moments(o[:10], u[:10], 0)
    np.testing.assert_allclose(exact[0], member0[0] + member0[1] * noise[0], atol=1e-10)


def test_train_contracts(rng):
    model = EnsembleDynamicsModel.create(3, 1, rng, 2, [8])
    with pytest.raises(ContractError):
        train(model, ReplayBuffer(3, 1), rng)
    buf = ReplayBuffer(4, 1)
    buf.add(np.zeros(4), np.zeros(1), np.zeros(4))
    with pytest.raises(ContractError):
        train(model, buf, rng)


def test_checkpoint_roundtrip(tmp_path, pendulum_model):
    model, _, _ = pendulum_model
    path = tmp_path / "m.dmdl"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.n_members == 5 and loaded.hidden == [64, 64]
    o, u, _ = pendulum_pairs(20, np.random.default_rng(1))
    np.testing.assert_array_equal(loaded.predict_mean(o, u), model.predict_mean(o, u))


def test_checkpoint_rejects_version_and_magic(tmp_path, rng):
    model = EnsembleDynamicsModel.create(3, 1, rng, 2, [4])
    path = tmp_path / "m.dmdl"
    save_model(model, path)
    blob = bytearray(path.read_bytes())
    blob[8:12] = (CHECKPOINT_VERSION + 1).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(ContractError, match="version"):
        load_model(path)
    blob[:8] = b"NOTMODEL"
    path.write_bytes(bytes(blob))
    with pytest.raises(ContractError):
        load_model(path)


def test_model_trained_at_n1_runs_at_n8(tmp_path):
    rng = np.random.default_rng(0)
    cfg = AgentConfig(trials=2, ensemble_size=2, hidden=(16,), train=TrainConfig(epochs=2),
                      cem=CemConfig(population=20, elites=4, iterations=2, horizon=5, particles=2))
    res = run_dats(DelayedEnv(Pendulum(horizon=30), 1), cfg, rng)
    assert res.buffer.obs.shape[1] == 3
    save_model(res.model, tmp_path / "n1.dmdl")
    model = load_model(tmp_path / "n1.dmdl")
    mean, std, returns = evaluate_transfer(model, DelayedEnv(Pendulum(horizon=30), 8), 1, cfg.cem, rng)
    assert np.isfinite(mean) and returns.shape == (1,)


@pytest.mark.parametrize("n", [0, 2, 5])
def test_buffer_stores_raw_observations(n):
    cfg = AgentConfig(trials=1, ensemble_size=1, hidden=(4,))
    res = run_dats(DelayedEnv(Pendulum(horizon=10), n), cfg, np.random.default_rng(0))
    assert res.buffer.obs.shape == (10, 3) and res.buffer.next_obs.shape == (10, 3)
