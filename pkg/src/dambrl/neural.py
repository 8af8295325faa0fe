"""Gaussian-output MLP with hand-written backpropagation and Adam.

Every array may carry a leading ensemble axis: weights ``(B, fan_in, fan_out)``,
biases ``(B, fan_out)``, inputs ``(B, N, d)``. Without it the same code
handles a single network. Member losses are summed, so member gradients stay
independent of one another.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core_mdp import ContractError

LOGVAR_REG = 1e-4
FORMAT_TAG = "dambrl-mlp"
FORMAT_VERSION = 1


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    max_logvar: np.ndarray
    min_logvar: np.ndarray

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[-2]] + [w.shape[-1] for w in self.weights]

    @property
    def out_dim(self) -> int:
        return self.max_logvar.shape[-1]

    @property
    def ensemble_shape(self) -> tuple[int, ...]:
        return self.weights[0].shape[:-2]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.max_logvar, self.min_logvar]

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "MlpParams":
        k = (len(arrays) - 2) // 2
        return cls(list(arrays[:k]), list(arrays[k:2 * k]), arrays[-2], arrays[-1])

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays([a.copy() for a in self.arrays()])

    def member(self, b: int) -> "MlpParams":
        """Single-network view of ensemble member ``b``."""
        return MlpParams.from_arrays([a[b].copy() for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])


def init_mlp(rng: np.random.Generator, in_dim: int, hidden: list[int], out_dim: int,
             ensemble: int | None = None, max_logvar: float = 0.5, min_logvar: float = -10.0) -> MlpParams:
    """Truncated-normal weights with std ``1/(2 sqrt(fan_in))``; zero biases."""
    lead = () if ensemble is None else (ensemble,)
    sizes = [in_dim, *hidden, 2 * out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = 1.0 / (2.0 * np.sqrt(fan_in))
        w = rng.standard_normal(lead + (fan_in, fan_out))
        bad = np.abs(w) > 2.0
        while bad.any():
            w[bad] = rng.standard_normal(bad.sum())
            bad = np.abs(w) > 2.0
        weights.append(w * std)
        biases.append(np.zeros(lead + (fan_out,)))
    return MlpParams(
        weights, biases,
        np.full(lead + (out_dim,), float(max_logvar)),
        np.full(lead + (out_dim,), float(min_logvar)),
    )


def _bias_swish(z, b):
    """Return (swish(z + b), sigmoid(z + b)); ``z`` is overwritten with ``z + b``."""
    z += b
    s = np.negative(z)
    with np.errstate(over="ignore"):
        np.exp(s, out=s)
    s += 1.0
    np.reciprocal(s, out=s)
    return z * s, s


def _bias(b):
    return b[..., None, :]


def _forward_cache(params: MlpParams, inputs: np.ndarray, check_finite: bool = True):
    x = np.asarray(inputs)
    if x.dtype != np.float32:
        x = x.astype(np.float64, copy=False)
    if x.shape[-1] != params.layer_sizes[0]:
        raise ContractError(f"input dim {x.shape[-1]} != network input {params.layer_sizes[0]}")
    if check_finite and not np.all(np.isfinite(x)):
        raise ContractError("non-finite network input")
    acts = [x]
    sigs = []
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h, s = _bias_swish(h @ w, _bias(b))
        acts.append(h)
        sigs.append(s)
    out = h @ params.weights[-1] + _bias(params.biases[-1])
    d = params.out_dim
    mean, raw = out[..., :d], out[..., d:]
    max_lv, min_lv = _bias(params.max_logvar), _bias(params.min_logvar)
    u = max_lv - raw
    bounded_top = max_lv - softplus(u)
    v = bounded_top - min_lv
    logvar = min_lv + softplus(v)
    return mean, logvar, (acts, sigs, u, v)


def forward(params: MlpParams, inputs, check_finite: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(means, logvars)``; logvars are softly bounded to (min_logvar, max_logvar).

    ``check_finite=False`` lets NaNs propagate instead of raising (planner rollouts).
    """
    mean, logvar, _ = _forward_cache(params, inputs, check_finite)
    return mean, logvar


def cast_params(params: MlpParams, dtype) -> MlpParams:
    """Contiguous copy of ``params`` in ``dtype`` (float32 speeds up planning rollouts)."""
    return MlpParams.from_arrays([np.ascontiguousarray(a, dtype=dtype) for a in params.arrays()])


def gaussian_nll(means, logvars, targets, params: MlpParams | None = None) -> float:
    """Mean over samples of the per-sample Gaussian NLL summed over output dims.

    The ``0.5 log(2 pi)`` constant is dropped. If ``params`` is given the
    log-variance bound regulariser ``1e-4 * sum(max_logvar - min_logvar)`` is
    added. Ensemble-shaped inputs return the sum of member losses.
    """
    resid = np.asarray(targets) - means
    per_sample = np.sum(0.5 * resid**2 * np.exp(-logvars) + 0.5 * logvars, axis=-1)
    loss = float(np.sum(np.mean(per_sample, axis=-1)))
    if params is not None:
        loss += LOGVAR_REG * float(np.sum(params.max_logvar) - np.sum(params.min_logvar))
    return loss


def member_nll(means, logvars, targets) -> np.ndarray:
    """Per-member NLL (no regulariser); shape = leading ensemble shape."""
    resid = np.asarray(targets) - means
    per_sample = np.sum(0.5 * resid**2 * np.exp(-logvars) + 0.5 * logvars, axis=-1)
    return np.mean(per_sample, axis=-1)


def backward(params: MlpParams, inputs, targets) -> tuple[MlpParams, float]:
    """Analytic gradient of ``gaussian_nll(..., params)``; returns (grads, loss)."""
    grads, member_losses = backward_members(params, inputs, targets)
    reg = LOGVAR_REG * float(np.sum(params.max_logvar) - np.sum(params.min_logvar))
    return grads, float(np.sum(member_losses)) + reg


def backward_members(params: MlpParams, inputs, targets) -> tuple[MlpParams, np.ndarray]:
    """Gradients plus the per-member NLL (without regulariser) at the current params."""
    mean, logvar, (acts, sigs, u, v) = _forward_cache(params, inputs)
    targets = np.asarray(targets, dtype=np.float64)
    n = targets.shape[-2]
    inv_var = np.exp(-logvar)
    resid = targets - mean
    loss = np.mean(np.sum(0.5 * resid**2 * inv_var + 0.5 * logvar, axis=-1), axis=-1)

    g_mean = -resid * inv_var / n
    g_logvar = (0.5 - 0.5 * resid**2 * inv_var) / n
    sig_u, sig_v = sigmoid(u), sigmoid(v)
    g_v = g_logvar * sig_v
    g_raw = g_v * sig_u
    g_max = np.sum(g_v * (1.0 - sig_u), axis=-2) + LOGVAR_REG
    g_min = np.sum(g_logvar * (1.0 - sig_v), axis=-2) - LOGVAR_REG

    delta = np.concatenate([g_mean, g_raw], axis=-1)
    gw, gb = [], []
    for i in range(len(params.weights) - 1, -1, -1):
        h = acts[i]
        gw.append(np.swapaxes(h, -1, -2) @ delta)
        gb.append(np.sum(delta, axis=-2))
        if i > 0:
            dh = delta @ np.swapaxes(params.weights[i], -1, -2)
            s = sigs[i - 1]
            # d swish(a)/da = s + a s (1 - s) = s + h (1 - s)
            delta = dh * (s + h * (1.0 - s))
    gw.reverse()
    gb.reverse()
    return MlpParams(gw, gb, g_max, g_min), loss


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, **kwargs) -> "AdamState":
        arrs = params.arrays()
        return cls(m=[np.zeros_like(a) for a in arrs], v=[np.zeros_like(a) for a in arrs], **kwargs)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState,
              weight_decay: float = 0.0) -> MlpParams:
    """Bias-corrected Adam update, in place; returns ``params`` for chaining.

    ``weight_decay`` adds an L2 term on weight matrices only.
    """
    p_arrs, g_arrs = params.arrays(), grads.arrays()
    if len(p_arrs) != len(g_arrs) or any(p.shape != g.shape for p, g in zip(p_arrs, g_arrs)):
        raise ContractError("gradient shapes do not match parameters")
    if not state.m:
        state.m = [np.zeros_like(a) for a in p_arrs]
        state.v = [np.zeros_like(a) for a in p_arrs]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    n_weights = len(params.weights)
    for i, (p, g, m, v) in enumerate(zip(p_arrs, g_arrs, state.m, state.v)):
        if weight_decay and i < n_weights:
            g = g + weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# --------------------------------------------------------------------------
# serialisation: text header + flat little-endian float64 payload
# --------------------------------------------------------------------------

def params_to_bytes(params: MlpParams) -> bytes:
    ens = params.ensemble_shape
    header = (
        f"{FORMAT_TAG} v{FORMAT_VERSION}\n"
        f"ensemble {' '.join(map(str, ens)) if ens else '-'}\n"
        f"layers {' '.join(map(str, params.layer_sizes))}\n"
        f"out_dim {params.out_dim}\n"
        f"end\n"
    ).encode("ascii")
    payload = params.flat().astype("<f8").tobytes()
    return struct.pack("<I", len(header)) + header + payload


def params_from_bytes(data: bytes) -> tuple[MlpParams, int]:
    """Decode params; returns (params, number of bytes consumed)."""
    (hlen,) = struct.unpack_from("<I", data, 0)
    header = data[4:4 + hlen].decode("ascii").splitlines()
    tag = header[0].split()
    if tag[0] != FORMAT_TAG or tag[1] != f"v{FORMAT_VERSION}":
        raise ContractError(f"unsupported parameter format {header[0]!r}")
    fields = dict(line.split(" ", 1) for line in header[1:-1])
    ens = () if fields["ensemble"] == "-" else tuple(int(x) for x in fields["ensemble"].split())
    sizes = [int(x) for x in fields["layers"].split()]
    out_dim = int(fields["out_dim"])
    shapes = [ens + (a, b) for a, b in zip(sizes[:-1], sizes[1:])]
    shapes += [ens + (b,) for b in sizes[1:]]
    shapes += [ens + (out_dim,), ens + (out_dim,)]
    count = sum(int(np.prod(s)) for s in shapes)
    start = 4 + hlen
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=start).astype(np.float64)
    arrays, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[pos:pos + size].reshape(s).copy())
        pos += size
    return MlpParams.from_arrays(arrays), start + 8 * count


# --------------------------------------------------------------------------
# finite-difference check
# --------------------------------------------------------------------------

def gradient_check(seed: int, in_dim: int = 3, hidden: tuple[int, ...] = (16, 16), out_dim: int = 2,
                   n_samples: int = 16, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between ``backward`` and central differences of ``gaussian_nll``.

    Relative error is ``|a - f| / max(|a|, |f|, floor)`` per parameter entry.
    Bounds are pulled in from their defaults so the soft clamps are active.
    """
    rng = np.random.default_rng(seed)
    params = init_mlp(rng, in_dim, list(hidden), out_dim, max_logvar=0.5, min_logvar=-2.0)
    for b in params.biases:
        b += 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((n_samples, in_dim))
    y = rng.standard_normal((n_samples, out_dim))
    grads, _ = backward(params, x, y)

    def loss():
        mean, logvar = forward(params, x)
        return gaussian_nll(mean, logvar, y, params)

    worst = 0.0
    for p, g in zip(params.arrays(), grads.arrays()):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = loss()
            flat_p[i] = orig - h
            down = loss()
            flat_p[i] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(flat_g[i] - fd) / max(abs(flat_g[i]), abs(fd), floor)
            worst = max(worst, err)
    return worst
