import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dambrl.core_mdp import (
    ContractError, FiniteMdp, FinitePolicy, augment_finite_mdp, check_theorem1, compare_mrps,
    decode_augmented, encode_augmented, random_case, random_finite_mdp, random_policy,
    recover_damrp, recover_mrp,
)


def _reference_damrp(mdp, policy, n, init):
    """Loop-level construction of the delayed reward process, written from scratch.

    Enumerates (s, queue) pairs explicitly with a dict index instead of the
    library's mixed-radix helpers.
    """
    S, A = mdp.n_states, mdp.n_actions
    states = [(s, q) for s in range(S) for q in itertools.product(range(A), repeat=n)]
    index = {x: i for i, x in enumerate(states)}
    X = len(states)
    kappa = np.zeros((X, X))
    r_bar = np.zeros(X)
    rho = np.zeros(X)
    for s in range(S):
        rho[index[(s, tuple(init))]] += mdp.rho[s]
    for i, (s, q) in enumerate(states):
        if n == 0:
            for a in range(A):
                r_bar[i] += policy.probs[i, a] * mdp.r[s, a]
                for s2 in range(S):
                    kappa[i, index[(s2, ())]] += policy.probs[i, a] * mdp.p[s, a, s2]
            continue
        head = q[0]
        r_bar[i] = mdp.r[s, head]
        for new in range(A):
            for s2 in range(S):
                kappa[i, index[(s2, q[1:] + (new,))]] += mdp.p[s, head, s2] * policy.probs[i, new]
    return rho, kappa, r_bar


def test_deterministic_policy_collapses_kernel(rng):
    mdp = random_finite_mdp(rng, 3, 2)
    probs = np.zeros((3, 2))
    probs[:, 0] = 1.0
    mrp = recover_mrp(mdp, FinitePolicy(probs))
    np.testing.assert_array_equal(mrp.kappa, mdp.p[:, 0, :])
    np.testing.assert_array_equal(mrp.r_bar, mdp.r[:, 0])


def test_n0_damrp_equals_mrp(rng):
    mdp = random_finite_mdp(rng, 4, 3)
    pol = random_policy(rng, 4, 3)
    a, b = recover_mrp(mdp, pol), recover_damrp(mdp, pol, 0, ())
    assert compare_mrps(a, b, 1e-15).passed


def test_deterministic_everything_gives_one_hot_rows():
    p = np.zeros((3, 2, 3))
    for s in range(3):
        p[s, 0, (s + 1) % 3] = 1
        p[s, 1, (s + 2) % 3] = 1
    mdp = FiniteMdp(np.array([1.0, 0, 0]), p, np.arange(6.0).reshape(3, 2))
    probs = np.zeros((3 * 2**2, 2))
    probs[np.arange(12), np.arange(12) % 2] = 1
    mrp = recover_damrp(mdp, FinitePolicy(probs), 2, (0, 1))
    assert np.all(np.sort(mrp.kappa, axis=1)[:, -1] == 1.0)
    assert np.all((mrp.kappa == 0) | (mrp.kappa == 1))


def test_seeded_3x2_n2_matches_reference():
    rng = np.random.default_rng(7)
    mdp = random_finite_mdp(rng, 3, 2)
    pol = random_policy(rng, 3 * 4, 2)
    direct = recover_damrp(mdp, pol, 2, (1, 0))
    via_aug = recover_mrp(augment_finite_mdp(mdp, 2, (1, 0)), pol)
    rho, kappa, r_bar = _reference_damrp(mdp, pol, 2, (1, 0))
    for mrp in (direct, via_aug):
        np.testing.assert_allclose(mrp.kappa, kappa, atol=1e-15, rtol=0)
        np.testing.assert_allclose(mrp.r_bar, r_bar, atol=1e-15, rtol=0)
        np.testing.assert_array_equal(mrp.rho, rho)


@pytest.mark.parametrize("seed", range(0, 200, 9))
def test_reference_agrees_on_random_cases(seed):
    mdp, pol, n, init = random_case(seed)
    rho, kappa, r_bar = _reference_damrp(mdp, pol, n, init)
    direct = recover_damrp(mdp, pol, n, init)
    np.testing.assert_allclose(direct.kappa, kappa, atol=1e-14, rtol=0)
    np.testing.assert_allclose(direct.r_bar, r_bar, atol=1e-14, rtol=0)
    np.testing.assert_allclose(direct.rho, rho, atol=0, rtol=0)


def test_theorem1_200_cases():
    worst = 0.0
    for seed in range(200):
        mdp, pol, n, init = random_case(seed)
        rep = check_theorem1(mdp, pol, n, init, 1e-12)
        assert rep.passed, (seed, rep)
        worst = max(worst, rep.max_diff)
    assert worst <= 1e-12


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 3), st.integers(0, 2**31))
def test_augmented_rows_sum_to_one(S, A, n, seed):
    rng = np.random.default_rng(seed)
    mdp = random_finite_mdp(rng, S, A)
    init = tuple(rng.integers(0, A, size=n))
    aug = augment_finite_mdp(mdp, n, init)
    assert aug.p.shape == (S * A**n, A, S * A**n)
    assert np.max(np.abs(aug.p.sum(axis=2) - 1)) <= 1e-12
    assert abs(aug.rho.sum() - 1) <= 1e-12


@given(st.integers(0, 3), st.integers(1, 4), st.integers(1, 3), st.data())
def test_encode_decode_roundtrip(n, S, A, data):
    s = data.draw(st.integers(0, S - 1))
    q = tuple(data.draw(st.lists(st.integers(0, A - 1), min_size=n, max_size=n)))
    idx = encode_augmented(s, q, A)
    assert 0 <= idx < S * A**n
    assert decode_augmented(idx, A, n) == (s, q)


def test_augmented_reward_uses_queue_head(rng):
    mdp = random_finite_mdp(rng, 2, 3)
    aug = augment_finite_mdp(mdp, 2, (0, 0))
    for x in range(aug.n_states):
        s, q = decode_augmented(x, 3, 2)
        assert np.all(aug.r[x] == mdp.r[s, q[0]])


def test_contracts(rng):
    mdp = random_finite_mdp(rng, 2, 2)
    with pytest.raises(ContractError):
        augment_finite_mdp(mdp, 2, (0,))
    with pytest.raises(ContractError):
        augment_finite_mdp(mdp, 1, (5,))
    with pytest.raises(ContractError):
        augment_finite_mdp(mdp, -1, ())
    with pytest.raises(ContractError):
        FiniteMdp(np.array([0.5, 0.4]), mdp.p, mdp.r)
    with pytest.raises(ContractError):
        recover_damrp(mdp, random_policy(rng, 3, 2), 1, (0,))
