"""Tabular MDPs and the exact delay-augmentation equivalence check.

Two routes build the Markov reward process of an ``n``-step delayed
system driven by a policy over augmented states:

* augment the MDP (``augment_finite_mdp``) and reduce it with the ordinary
  policy-averaging construction (``recover_mrp``);
* build the delayed reward process kernel directly from the original MDP
  (``recover_damrp``).

``check_theorem1`` compares the two elementwise. Both routes are exact
double-precision tabular arithmetic; no sampling is involved.

Augmented states ``(s, a_0, ..., a_{n-1})`` are indexed in mixed radix,
``index = s * A**n + sum_i a_i * A**(n-1-i)``, with ``a_0`` the head of the
queue (the next action to execute).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


class ContractError(ValueError):
    """Raised when inputs violate a documented precondition."""


def _check_simplex(arr: np.ndarray, axis: int, what: str) -> None:
    if np.any(arr < -PROB_TOL) or np.any(arr > 1 + PROB_TOL):
        raise ContractError(f"{what}: probabilities must lie in [0, 1]")
    sums = arr.sum(axis=axis)
    if np.any(np.abs(sums - 1.0) > PROB_TOL):
        raise ContractError(f"{what}: rows must sum to 1 (max error {np.max(np.abs(sums - 1.0)):.3e})")


@dataclass(frozen=True)
class FiniteMdp:
    """Explicit tabular MDP.

    Attributes:
        rho: initial state distribution, shape ``(S,)``.
        p: transition tensor, ``p[s, a, s']``, shape ``(S, A, S)``.
        r: reward table ``r[s, a]``, shape ``(S, A)``.
    """

    rho: np.ndarray
    p: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        r = np.asarray(self.r, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ContractError(f"p must have shape (S, A, S), got {p.shape}")
        n_states, n_actions = p.shape[:2]
        if rho.shape != (n_states,):
            raise ContractError(f"rho must have shape ({n_states},), got {rho.shape}")
        if r.shape != (n_states, n_actions):
            raise ContractError(f"r must have shape ({n_states}, {n_actions}), got {r.shape}")
        _check_simplex(rho, 0, "rho")
        _check_simplex(p, 2, "p")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)

    @property
    def n_states(self) -> int:
        return self.p.shape[0]

    @property
    def n_actions(self) -> int:
        return self.p.shape[1]


@dataclass(frozen=True)
class FinitePolicy:
    """Stochastic policy ``probs[x, a]`` over (possibly augmented) states."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ContractError(f"policy table must be 2-d, got shape {probs.shape}")
        _check_simplex(probs, 1, "policy")
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class FiniteMrp:
    rho: np.ndarray
    kappa: np.ndarray
    r_bar: np.ndarray

    @property
    def n_states(self) -> int:
        return self.kappa.shape[0]


def encode_augmented(state: int, queue: Sequence[int], n_actions: int) -> int:
    """Mixed-radix index of ``(state, queue)``; ``queue[0]`` is the head."""
    idx = state
    for a in queue:
        idx = idx * n_actions + int(a)
    return idx


def decode_augmented(index: int, n_actions: int, n: int) -> tuple[int, tuple[int, ...]]:
    queue = []
    for _ in range(n):
        index, a = divmod(index, n_actions)
        queue.append(a)
    return index, tuple(reversed(queue))


def _augmented_digits(n_states: int, n_actions: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised decode of every augmented index: (state (X,), queue (X, n))."""
    idx = np.arange(n_states * n_actions**n)
    queue = np.empty((idx.size, n), dtype=np.int64)
    rem = idx.copy()
    for i in range(n - 1, -1, -1):
        rem, queue[:, i] = np.divmod(rem, n_actions)
    return rem, queue


def recover_mrp(mdp: FiniteMdp, policy: FinitePolicy) -> FiniteMrp:
    """Average an MDP's transitions and rewards over a policy."""
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ContractError(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )
    pi = policy.probs
    kappa = np.einsum("sat,sa->st", mdp.p, pi)
    r_bar = np.einsum("sa,sa->s", mdp.r, pi)
    return FiniteMrp(rho=mdp.rho.copy(), kappa=kappa, r_bar=r_bar)


def _check_init_actions(mdp: FiniteMdp, n: int, init_actions: Sequence[int]) -> tuple[int, ...]:
    if n < 0:
        raise ContractError(f"delay must be non-negative, got {n}")
    init = tuple(int(a) for a in init_actions)
    if len(init) != n:
        raise ContractError(f"need {n} initial actions, got {len(init)}")
    if any(a < 0 or a >= mdp.n_actions for a in init):
        raise ContractError(f"initial actions {init} out of range for {mdp.n_actions} actions")
    return init


def augment_finite_mdp(mdp: FiniteMdp, n: int, init_actions: Sequence[int] = ()) -> FiniteMdp:
    """Tabular delay-augmented MDP over ``S x A**n``.

    Taking action ``b`` in ``(s, a_0..a_{n-1})`` executes ``a_0``, moves the
    environment with ``p(.|s, a_0)`` and appends ``b`` to the queue. The
    reward is ``r(s, a_0)``. With ``n == 0`` the input tables are returned
    unchanged (as copies).
    """
    init = _check_init_actions(mdp, n, init_actions)
    S, A = mdp.n_states, mdp.n_actions
    if n == 0:
        return FiniteMdp(mdp.rho.copy(), mdp.p.copy(), mdp.r.copy())

    Q = A**n
    X = S * Q
    states, queues = _augmented_digits(S, A, n)
    head = queues[:, 0]
    tail_index = (np.arange(X) % Q) % (Q // A)  # queue without its head, as an (n-1)-digit number

    p_aug = np.zeros((X, A, X))
    for b in range(A):
        new_queue = tail_index * A + b
        # columns s' * Q + new_queue for every s'
        cols = np.arange(S)[None, :] * Q + new_queue[:, None]
        p_aug[np.arange(X)[:, None], b, cols] = mdp.p[states, head, :]

    r_aug = np.repeat(mdp.r[states, head][:, None], A, axis=1)
    rho_aug = np.zeros(X)
    q0 = encode_augmented(0, init, A)
    rho_aug[np.arange(S) * Q + q0] = mdp.rho
    return FiniteMdp(rho_aug, p_aug, r_aug)


def recover_damrp(
    mdp: FiniteMdp, policy: FinitePolicy, n: int, init_actions: Sequence[int] = ()
) -> FiniteMrp:
    """Build the delayed reward process directly from the undelayed MDP.

    ``kappa(x'|x) = p(s'|s, a_0) * [x'.queue[:-1] == x.queue[1:]] * pi(x'.queue[-1] | x)``
    and ``r_bar(x) = r(s, a_0)``; for ``n == 0`` this is ``recover_mrp``.
    Written with pairwise decoding of every ``(x, x')`` so it shares no index
    arithmetic with ``augment_finite_mdp``.
    """
    init = _check_init_actions(mdp, n, init_actions)
    S, A = mdp.n_states, mdp.n_actions
    X = S * A**n
    if policy.probs.shape != (X, A):
        raise ContractError(f"policy shape {policy.probs.shape} does not match augmented space ({X}, {A})")
    if n == 0:
        return recover_mrp(mdp, policy)

    states, queues = _augmented_digits(S, A, n)
    head = queues[:, 0]
    # consistency[x, x'] : queue of x' equals queue of x shifted left by one
    consistent = np.all(queues[None, :, : n - 1] == queues[:, None, 1:], axis=2)
    trans = mdp.p[states[:, None], head[:, None], states[None, :]]  # p(s'|s, a_0) for every pair
    newest = queues[:, n - 1]  # last queue slot of x' holds the freshly chosen action
    choose = policy.probs[:, newest]  # pi(newest(x') | x)
    kappa = trans * consistent * choose
    r_bar = mdp.r[states, head]
    rho = np.zeros(X)
    for s in range(S):
        rho[encode_augmented(s, init, A)] = mdp.rho[s]
    return FiniteMrp(rho=rho, kappa=kappa, r_bar=r_bar)


@dataclass(frozen=True)
class EquivalenceReport:
    passed: bool
    max_diff: float
    rho_diff: float
    kappa_diff: float
    r_bar_diff: float
    tol: float


def compare_mrps(a: FiniteMrp, b: FiniteMrp, tol: float) -> EquivalenceReport:
    if tol <= 0:
        raise ContractError("tol must be positive")
    if a.kappa.shape != b.kappa.shape:
        inf = float("inf")
        return EquivalenceReport(False, inf, inf, inf, inf, tol)
    rho_d = float(np.max(np.abs(a.rho - b.rho)))
    kappa_d = float(np.max(np.abs(a.kappa - b.kappa)))
    r_d = float(np.max(np.abs(a.r_bar - b.r_bar)))
    max_d = max(rho_d, kappa_d, r_d)
    return EquivalenceReport(max_d <= tol, max_d, rho_d, kappa_d, r_d, tol)


def check_theorem1(
    mdp: FiniteMdp,
    policy: FinitePolicy,
    n: int,
    init_actions: Sequence[int] = (),
    tol: float = 1e-12,
) -> EquivalenceReport:
    """Compare the augmented-MDP reduction against the direct delayed construction."""
    via_augmentation = recover_mrp(augment_finite_mdp(mdp, n, init_actions), policy)
    direct = recover_damrp(mdp, policy, n, init_actions)
    return compare_mrps(via_augmentation, direct, tol)


def random_finite_mdp(rng: np.random.Generator, n_states: int, n_actions: int) -> FiniteMdp:
    """Dirichlet-random transitions, uniform-random rewards in [-1, 1]."""
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    rho = rng.dirichlet(np.ones(n_states))
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return FiniteMdp(rho, p, r)


def random_policy(rng: np.random.Generator, n_rows: int, n_actions: int) -> FinitePolicy:
    return FinitePolicy(rng.dirichlet(np.ones(n_actions), size=n_rows))


def random_case(seed: int, max_states: int = 4, max_actions: int = 3, max_delay: int = 3):
    """One seeded random instance: (mdp, augmented policy, delay, initial actions)."""
    rng = np.random.default_rng(seed)
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    n = int(rng.integers(0, max_delay + 1))
    mdp = random_finite_mdp(rng, S, A)
    policy = random_policy(rng, S * A**n, A)
    init = tuple(int(a) for a in rng.integers(0, A, size=n))
    return mdp, policy, n, init
