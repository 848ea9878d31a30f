import numpy as np
import pytest

from fac.core import make_rng
from fac.mdp_oracle import (ConvergenceError, TabularMDP, apply_shaping, bellman_backup, bellman_residual,
                            greedy_policy, random_mdp, value_iteration, verify_shaping_theorem)


def chain(n_states, gamma=0.99):
    """Deterministic chain 0 -> 1 -> ... -> terminal, reward 1 on the last step only."""
    P = np.zeros((n_states, 1, n_states))
    R = np.zeros_like(P)
    for s in range(n_states - 1):
        P[s, 0, s + 1] = 1.0
    R[n_states - 2, 0, n_states - 1] = 1.0
    P[-1, 0, -1] = 1.0
    term = np.zeros(n_states, bool)
    term[-1] = True
    return TabularMDP(P, R, gamma, term)


def test_random_mdp_rows_are_distributions():
    m = random_mdp(make_rng(3), 5, 2, 2)
    assert np.allclose(m.transition.sum(axis=2), 1.0, atol=1e-12)
    assert m.terminal.sum() == 1
    assert np.all(np.abs(m.reward) <= 1.0)


def test_random_mdp_deterministic():
    a, b = random_mdp(make_rng(3), 5, 2, 2), random_mdp(make_rng(3), 5, 2, 2)
    assert np.array_equal(a.transition, b.transition) and np.array_equal(a.reward, b.reward)


def test_random_mdp_branching():
    m = random_mdp(make_rng(4), 10, 3, 4)
    live = ~m.terminal
    assert np.all((m.transition[live] > 0).sum(axis=2) == 4)


@pytest.mark.parametrize("args", [(1, 2, 1), (5, 0, 1), (5, 2, 0), (5, 2, 6)])
def test_random_mdp_invalid_sizes(args):
    with pytest.raises(ValueError):
        random_mdp(make_rng(0), *args)


def test_value_iteration_larger_instance_converges():
    m = random_mdp(make_rng(3), 25, 5, 4)
    q = value_iteration(m, 1e-10)
    assert bellman_residual(m, q) <= 1e-10


def test_two_state_chain():
    q = value_iteration(chain(2), 1e-12)
    assert q[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_three_state_chain():
    q = value_iteration(chain(3), 1e-12)
    assert q[0, 0] == pytest.approx(0.99, abs=1e-12)
    assert q[1, 0] == pytest.approx(1.0, abs=1e-12)
    assert q[2, 0] == 0.0


def test_value_iteration_contracts_by_gamma():
    m = random_mdp(make_rng(9), 12, 3, 3)
    q = np.zeros((12, 3))
    prev = None
    for _ in range(50):
        res = bellman_residual(m, q)
        if prev is not None:
            assert res <= m.gamma * prev + 1e-12
        prev = res
        q = bellman_backup(m, q)


def test_non_convergence_reports_residual():
    m = random_mdp(make_rng(1), 10, 2, 3)
    with pytest.raises(ConvergenceError) as err:
        value_iteration(m, 1e-12, max_iters=3)
    assert err.value.residual > 0


@pytest.mark.parametrize("row, expected", [([1.0, 0.2], {0}), ([0.5, 0.5], {0, 1})])
def test_greedy_policy_sets(row, expected):
    assert greedy_policy(np.array([row]))[0] == expected


def test_zero_potential_is_identity():
    m = random_mdp(make_rng(2), 6, 2, 3)
    assert np.array_equal(apply_shaping(m, np.zeros(6)).reward, m.reward)


def test_constant_potential_shifts_every_reward():
    m = random_mdp(make_rng(2), 6, 2, 3)
    c = 3.0
    shaped = apply_shaping(m, np.full(6, c))
    assert np.allclose(shaped.reward - m.reward, m.gamma * c - c, atol=1e-14)


def test_shaping_is_invertible():
    m = random_mdp(make_rng(5), 8, 3, 3)
    phi = make_rng(6).uniform(-10, 10, size=8)
    back = apply_shaping(apply_shaping(m, phi), -phi)
    assert np.max(np.abs(back.reward - m.reward)) <= 1e-12


def test_shaping_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_shaping(random_mdp(make_rng(2), 6, 2, 3), np.zeros(5))


def test_gamma_one_requires_zero_potential_at_absorbing_state():
    m = chain(3, gamma=1.0)
    with pytest.raises(ValueError):
        apply_shaping(m, np.array([0.0, 1.0, 2.0]))
    r = verify_shaping_theorem(m, np.array([5.0, -1.0, 0.0]))
    assert r.max_q_deviation < 1e-9 and r.policy_agreement


def test_verify_zero_potential():
    r = verify_shaping_theorem(random_mdp(make_rng(8), 10, 3, 3), np.zeros(10))
    assert r.max_q_deviation == 0.0 and r.max_v_deviation == 0.0 and r.policy_agreement


@pytest.mark.parametrize("seed", range(10))
def test_verify_random_instances(seed):
    rng = make_rng(seed)
    m = random_mdp(rng, 15, 4, 3)
    r = verify_shaping_theorem(m, rng.uniform(-10, 10, size=15))
    assert r.max_q_deviation <= 1e-6
    assert r.policy_agreement


def test_ideal_potential_gives_non_positive_advantages():
    m = random_mdp(make_rng(12), 20, 4, 3)
    q = value_iteration(m, 1e-12)
    v = q.max(axis=1)
    q_shaped = value_iteration(apply_shaping(m, v), 1e-12)
    assert np.all(q_shaped <= 1e-8)
    best = q_shaped.max(axis=1)
    assert np.allclose(best, 0.0, atol=1e-8)
    for s, acts in enumerate(greedy_policy(q)):
        assert all(abs(q_shaped[s, a]) <= 1e-8 for a in acts)


def test_mdp_rejects_non_stochastic_rows():
    P = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
    with pytest.raises(ValueError):
        TabularMDP(P, np.zeros_like(P))
