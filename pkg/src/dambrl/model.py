"""Bootstrapped probabilistic ensemble of one-step dynamics models.

Members predict normalised state deltas from normalised ``obs ++ action``.
The model never sees the delay: inputs are raw environment observations and
executed actions, so a model trained under one delay runs under any other.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .core_mdp import ContractError

CHECKPOINT_MAGIC = b"DAMBRLEN"
CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-8


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalizer":
        return cls(data.mean(axis=0), np.maximum(data.std(axis=0), STD_FLOOR))

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, x):
        return x * self.std + self.mean


class ReplayBuffer:
    """Raw ``(obs, action, next_obs)`` transitions in insertion order."""

    def __init__(self, obs_dim: int, action_dim: int, capacity: int = 1_000_000):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.capacity = capacity
        self.obs = np.zeros((0, obs_dim))
        self.actions = np.zeros((0, action_dim))
        self.next_obs = np.zeros((0, obs_dim))
        self.inserted = 0

    def add(self, obs, action, next_obs) -> None:
        self.add_batch(np.atleast_2d(obs), np.atleast_2d(action), np.atleast_2d(next_obs))

    def add_batch(self, obs, actions, next_obs) -> None:
        obs = np.asarray(obs, dtype=np.float64).reshape(-1, self.obs_dim)
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, self.action_dim)
        next_obs = np.asarray(next_obs, dtype=np.float64).reshape(-1, self.obs_dim)
        if not (len(obs) == len(actions) == len(next_obs)):
            raise ContractError("transition arrays must have equal length")
        self.obs = np.concatenate([self.obs, obs])[-self.capacity:]
        self.actions = np.concatenate([self.actions, actions])[-self.capacity:]
        self.next_obs = np.concatenate([self.next_obs, next_obs])[-self.capacity:]
        self.inserted += len(obs)

    def __len__(self) -> int:
        return len(self.obs)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    patience: int = 5
    min_improvement: float = 1e-3


@dataclass
class TrainReport:
    nll_curve: np.ndarray  # (epochs_run, B) mean training NLL per member per epoch
    epochs_run: int

    @property
    def final_nll(self) -> np.ndarray:
        return self.nll_curve[-1]


@dataclass
class EnsembleDynamicsModel:
    obs_dim: int
    action_dim: int
    params: neural.MlpParams
    input_norm: Normalizer
    target_norm: Normalizer
    optimizer: neural.AdamState | None = None
    noise_scale: float = 1.0  # 0 turns sampling into mean prediction (test hook)
    history: list = field(default_factory=list)
    rollout_dtype: type = np.float32  # precision of sample_next; float64 for exact tests
    _rollout_cache: tuple | None = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def create(cls, obs_dim: int, action_dim: int, rng: np.random.Generator,
               ensemble_size: int = 5, hidden: list[int] | None = None) -> "EnsembleDynamicsModel":
        hidden = [200, 200, 200] if hidden is None else list(hidden)
        params = neural.init_mlp(rng, obs_dim + action_dim, hidden, obs_dim, ensemble=ensemble_size)
        return cls(obs_dim, action_dim, params,
                   Normalizer.identity(obs_dim + action_dim), Normalizer.identity(obs_dim))

    @property
    def n_members(self) -> int:
        return self.params.ensemble_shape[0]

    @property
    def hidden(self) -> list[int]:
        return self.params.layer_sizes[1:-1]

    # -- prediction ---------------------------------------------------------

    def _member_forward(self, obs, actions, check_finite=True):
        """obs (B, N, obs_dim), actions (B, N, act_dim) -> normalised (mean, logvar)."""
        x = self.input_norm.apply(np.concatenate([obs, actions], axis=-1))
        return neural.forward(self.params, x, check_finite)

    def invalidate(self) -> None:
        """Drop the cached rollout copy; call after mutating ``params`` or normalisers."""
        self._rollout_cache = None

    def _rollout_params(self):
        if self._rollout_cache is None or self._rollout_cache[0] is not self.rollout_dtype:
            dt = self.rollout_dtype
            self._rollout_cache = (
                dt,
                neural.cast_params(self.params, dt),
                self.input_norm.mean.astype(dt), (1.0 / self.input_norm.std).astype(dt),
                self.target_norm.mean.astype(dt), self.target_norm.std.astype(dt),
            )
        return self._rollout_cache[1:]

    def sample_next(self, obs, actions, noise) -> np.ndarray:
        """Propagate particles laid out member-major: ``obs`` is ``(B, N, obs_dim)``.

        ``noise`` holds standard normals of the same shape as ``obs``. The
        network runs in ``rollout_dtype``; the returned states are float64.
        """
        params, in_mean, in_scale, out_mean, out_std = self._rollout_params()
        dt = self.rollout_dtype
        x = np.concatenate([obs, actions], axis=-1).astype(dt)
        x -= in_mean
        x *= in_scale
        mean, logvar = neural.forward(params, x, check_finite=False)
        logvar *= 0.5
        np.exp(logvar, out=logvar)
        logvar *= dt(self.noise_scale)
        logvar *= noise
        mean += logvar
        mean *= out_std
        mean += out_mean
        return obs + mean

    def predict_mean(self, obs, action) -> np.ndarray:
        """Average of member mean predictions, de-normalised and added to ``obs``."""
        obs = np.asarray(obs, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        single = obs.ndim == 1
        o = np.atleast_2d(obs)
        a = np.broadcast_to(np.atleast_2d(action), (o.shape[0], self.action_dim))
        B = self.n_members
        mean, _ = self._member_forward(np.broadcast_to(o, (B,) + o.shape), np.broadcast_to(a, (B,) + a.shape))
        out = o + self.target_norm.invert(mean).mean(axis=0)
        return out[0] if single else out

    def predict_moments(self, obs, action, member_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and std of the predicted next observation for one member."""
        o = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        a = np.broadcast_to(np.atleast_2d(np.asarray(action, dtype=np.float64)), (o.shape[0], self.action_dim))
        member = self.params.member(member_id)
        x = self.input_norm.apply(np.concatenate([o, a], axis=-1))
        mean, logvar = neural.forward(member, x)
        return o + self.target_norm.invert(mean), np.exp(0.5 * logvar) * self.target_norm.std


def predict_sample(model: EnsembleDynamicsModel, obs, action, member_id, rng: np.random.Generator) -> np.ndarray:
    """Draw ``obs + delta`` with ``delta ~ N(mean, exp(logvar))`` from member(s) ``member_id``.

    ``obs`` may be a single vector or a batch; ``member_id`` a scalar or one id per row.
    """
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    o = np.atleast_2d(obs)
    a = np.broadcast_to(np.atleast_2d(np.asarray(action, dtype=np.float64)), (o.shape[0], model.action_dim))
    ids = np.broadcast_to(np.asarray(member_id), (o.shape[0],))
    if np.any(ids < 0) or np.any(ids >= model.n_members):
        raise ContractError(f"member_id must be in [0, {model.n_members})")
    noise = rng.standard_normal(o.shape)
    out = np.empty_like(o)
    for b in np.unique(ids):
        rows = ids == b
        member = model.params.member(int(b))
        x = model.input_norm.apply(np.concatenate([o[rows], a[rows]], axis=-1))
        mean, logvar = neural.forward(member, x)
        delta = mean + model.noise_scale * np.exp(0.5 * logvar) * noise[rows]
        out[rows] = o[rows] + model.target_norm.invert(delta)
    return out[0] if single else out


def predict_mean(model: EnsembleDynamicsModel, obs, action) -> np.ndarray:
    return model.predict_mean(obs, action)


def training_arrays(buffer: ReplayBuffer) -> tuple[np.ndarray, np.ndarray]:
    inputs = np.concatenate([buffer.obs, buffer.actions], axis=1)
    targets = buffer.next_obs - buffer.obs
    return inputs, targets


def train(model: EnsembleDynamicsModel, buffer: ReplayBuffer, rng: np.random.Generator,
          config: TrainConfig | None = None, epochs: int | None = None,
          batch_size: int | None = None) -> TrainReport:
    """Refit normalisers on the whole buffer, then train each member on its own bootstrap.

    Parameters and optimiser state persist across calls (incremental training
    between trials). Stops early once the mean epoch NLL has improved by less
    than ``min_improvement`` over ``patience`` epochs.
    """
    cfg = config or TrainConfig()
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    if len(buffer) == 0:
        raise ContractError("cannot train on an empty replay buffer")
    if buffer.obs_dim != model.obs_dim or buffer.action_dim != model.action_dim:
        raise ContractError("buffer dimensions do not match the model")

    inputs, targets = training_arrays(buffer)
    model.input_norm = Normalizer.fit(inputs)
    model.target_norm = Normalizer.fit(targets)
    x_all = model.input_norm.apply(inputs)
    y_all = model.target_norm.apply(targets)

    if model.optimizer is None or model.optimizer.lr != cfg.lr:
        model.optimizer = neural.AdamState.for_params(model.params, lr=cfg.lr)

    B, N = model.n_members, len(buffer)
    boot = rng.integers(0, N, size=(B, N))
    bs = min(batch_size, N)
    n_batches = max(1, N // bs)
    curve = []
    for _ in range(epochs):
        order = np.take_along_axis(boot, rng.permuted(np.tile(np.arange(N), (B, 1)), axis=1), axis=1)
        epoch_loss = np.zeros(B)
        for k in range(n_batches):
            idx = order[:, k * bs:(k + 1) * bs]
            xb, yb = x_all[idx], y_all[idx]
            grads, losses = neural.backward_members(model.params, xb, yb)
            neural.adam_step(model.params, grads, model.optimizer, weight_decay=cfg.weight_decay)
            epoch_loss += losses
        curve.append(epoch_loss / n_batches)
        if len(curve) > cfg.patience:
            before = np.mean(curve[-cfg.patience - 1])
            if before - np.mean(curve[-1]) < cfg.min_improvement:
                break
    report = TrainReport(np.array(curve), len(curve))
    model.history.append(report)
    model.invalidate()
    return report


def holdout_nll(model: EnsembleDynamicsModel, buffer: ReplayBuffer) -> np.ndarray:
    """Per-member NLL of the buffer in the model's current normalised units."""
    inputs, targets = training_arrays(buffer)
    x = model.input_norm.apply(inputs)
    y = model.target_norm.apply(targets)
    B = model.n_members
    mean, logvar = neural.forward(model.params, np.broadcast_to(x, (B,) + x.shape))
    return neural.member_nll(mean, logvar, np.broadcast_to(y, (B,) + y.shape))


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_model(model: EnsembleDynamicsModel, path) -> None:
    sizes = model.params.layer_sizes
    header = struct.pack(
        f"<8sIIII I{len(sizes)}I",
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.n_members, model.obs_dim, model.action_dim,
        len(sizes), *sizes,
    )
    stats = np.concatenate([model.input_norm.mean, model.input_norm.std,
                            model.target_norm.mean, model.target_norm.std]).astype("<f8").tobytes()
    members = b"".join(
        model.params.member(b).flat().astype("<f8").tobytes() for b in range(model.n_members)
    )
    Path(path).write_bytes(header + stats + members)


def load_model(path) -> EnsembleDynamicsModel:
    data = Path(path).read_bytes()
    magic, version, B, obs_dim, act_dim, n_sizes = struct.unpack_from("<8sIIIII", data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: not a dambrl model checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off = struct.calcsize("<8sIIIII")
    sizes = list(struct.unpack_from(f"<{n_sizes}I", data, off))
    off += 4 * n_sizes
    in_dim = obs_dim + act_dim
    if sizes[0] != in_dim or sizes[-1] != 2 * obs_dim:
        raise ContractError(f"{path}: layer sizes {sizes} inconsistent with dims")
    n_stats = 2 * in_dim + 2 * obs_dim
    stats = np.frombuffer(data, "<f8", n_stats, off).astype(np.float64)
    off += 8 * n_stats
    template = neural.init_mlp(np.random.default_rng(0), in_dim, sizes[1:-1], obs_dim)
    shapes = [a.shape for a in template.arrays()]
    per_member = sum(int(np.prod(s)) for s in shapes)
    flat = np.frombuffer(data, "<f8", per_member * B, off).astype(np.float64).reshape(B, per_member)
    arrays, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[:, pos:pos + size].reshape((B,) + s).copy())
        pos += size
    i0, i1 = in_dim, 2 * in_dim
    return EnsembleDynamicsModel(
        obs_dim, act_dim, neural.MlpParams.from_arrays(arrays),
        Normalizer(stats[:i0].copy(), stats[i0:i1].copy()),
        Normalizer(stats[i1:i1 + obs_dim].copy(), stats[i1 + obs_dim:].copy()),
    )


class TrueDynamicsModel:
    """Ground-truth dynamics exposed through the ensemble's particle interface.

    Used by the oracle agent: every "member" is the real simulator and the
    noise argument is ignored.
    """

    def __init__(self, env, n_members: int = 1):
        self.env = env
        self.obs_dim = env.spec.obs_dim
        self.action_dim = env.spec.action_dim
        self.n_members = n_members

    def sample_next(self, obs, actions, noise=None) -> np.ndarray:
        return self.env.obs_step(obs, actions)

    def predict_mean(self, obs, action) -> np.ndarray:
        return self.env.obs_step(np.asarray(obs, dtype=np.float64), np.asarray(action, dtype=np.float64))
