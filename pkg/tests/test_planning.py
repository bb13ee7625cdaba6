from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from hybrid_linrl.dataset import gen_offline, uniform_policy
from hybrid_linrl.dynprog import eval_policy_exact, optimal_value, value_iteration
from hybrid_linrl.envs import TabularMDP, random_tabular_mdp
from hybrid_linrl.features import tabular_to_linear
from hybrid_linrl.planning import (
    VarianceModel,
    estimate_variance,
    first_pass_values,
    linpevi_advplus,
    pessimism_radius,
    variance_correction,
)
from hybrid_linrl.rappel import RappelConfig, plan_offline


def uniform_start(env: TabularMDP) -> TabularMDP:
    S = env.num_states
    return TabularMDP(env.transitions, env.rewards, np.full(S, 1.0 / S))


def unit_variance(H, d):
    return VarianceModel(np.zeros((H, d)), np.zeros((H, d)), 0.0)


def test_zero_reward_first_pass_is_zero():
    env = random_tabular_mdp(3, 2, 3, seed=0)
    env0 = TabularMDP(env.transitions, np.zeros_like(env.rewards), env.initial)
    data = gen_offline(env0, uniform_policy(env0), 30, seed=0)
    assert np.all(first_pass_values(data, tabular_to_linear(env0), 1 / 9, 1.0) == 0)


def test_single_step_first_pass_closed_form():
    env = random_tabular_mdp(3, 2, 1, seed=1)
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), 40, seed=0)
    lam, beta = 1.0, 0.3
    V = first_pass_values(data, fmap, lam, beta)
    counts = np.zeros(6)
    sums = np.zeros(6)
    for t in data:
        i = t.states[0] * 2 + t.actions[0]
        counts[i] += 1
        sums[i] += t.rewards[0]
    q = sums / (counts + lam) - beta / np.sqrt(counts + lam)
    expected = np.clip(q.reshape(3, 2).max(axis=1), 0, 1)
    assert_allclose(V[0], expected, atol=1e-12)


def test_first_pass_close_to_optimal_with_many_trajectories():
    env = uniform_start(random_tabular_mdp(3, 2, 3, seed=2))
    data = gen_offline(env, uniform_policy(env), 10_000, seed=0)
    V = first_pass_values(data, tabular_to_linear(env), 1 / 9, 0.0)
    _, Vstar, _ = value_iteration(env)
    assert np.max(np.abs(V[:3] - Vstar[:3])) < 0.1


def test_variance_floor_on_deterministic_mdp():
    S, A, H = 3, 2, 3
    P = np.zeros((H, S, A, S))
    for s in range(S):
        for a in range(A):
            P[:, s, a, (s + a) % S] = 1.0
    R = np.random.default_rng(0).random((H, S, A))
    env = TabularMDP(P, R, np.full(S, 1 / S))
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), 2000, seed=0)
    Vp = first_pass_values(data, fmap, 1 / 9, 0.0)
    model = estimate_variance(data, Vp, fmap, 1 / 9, c_var=0.0)
    for h in range(H):
        assert_allclose(model.table(fmap, h), 1.0)


def test_large_correction_floors_everything():
    env = random_tabular_mdp(3, 2, 3, seed=3)
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), 100, seed=0)
    model = estimate_variance(data, first_pass_values(data, fmap, 1 / 9, 0.0), fmap, 1 / 9, c_var=1e6)
    for h in range(3):
        assert np.all(model.table(fmap, h) == 1.0)


def coin_flip_env():
    """Step 1: both states flip a fair coin. Step 2: reward 1 in state 1 only."""
    P = np.full((2, 2, 1, 2), 0.5)
    R = np.zeros((2, 2, 1))
    R[1, 1, 0] = 1.0
    return TabularMDP(P, R, np.array([1.0, 0.0]))


def test_coin_flip_variance_matches_empirical_conditional_variance():
    env = coin_flip_env()
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), 4000, seed=0)
    Vp = first_pass_values(data, fmap, 0.25, 0.0)
    model = estimate_variance(data, Vp, fmap, 0.25, c_var=0.0)
    raw = np.clip(fmap.table @ model.beta2[0], 0, 4) - np.clip(fmap.table @ model.beta1[0], 0, 2) ** 2
    nxt = np.array([t.states[1] for t in data])
    empirical = Vp[1][nxt].var()
    assert abs(raw[0, 0] - empirical) < 0.01
    assert abs(raw[0, 0] - 0.25) < 0.02
    assert model.table(fmap, 0)[0, 0] == 1.0
    assert variance_correction(0.01, 4, 2, 100) == pytest.approx(0.01 * 4 * 8 / 10)


def test_empty_reward_plan_values_zero():
    env = random_tabular_mdp(3, 2, 3, seed=4)
    env0 = TabularMDP(env.transitions, np.zeros_like(env.rewards), env.initial)
    fmap = tabular_to_linear(env0)
    plan = linpevi_advplus(gen_offline(env0, uniform_policy(env0), 20, 0), unit_variance(3, 6), fmap, 1 / 9, 1.0)
    assert np.all(plan.V == 0)


def test_unpenalized_plan_consistent_with_optimal_value():
    rng = np.random.default_rng(5)
    S, A, H = 3, 2, 2
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    env = TabularMDP(P, rng.random((H, S, A)), np.full(S, 1 / S))
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), 100_000, seed=1)
    states, actions, _ = data.arrays()
    for h in range(H):
        counts = np.bincount(states[:, h] * A + actions[:, h], minlength=S * A)
        assert counts.min() >= 10_000
    plan = linpevi_advplus(data, unit_variance(H, S * A), fmap, 1 / H**2, 0.0)
    _, Vstar, _ = value_iteration(env)
    assert np.max(np.abs(plan.V[0] - Vstar[0])) < 0.05


def test_plan_rejects_empty_and_out_of_range():
    env = random_tabular_mdp(3, 2, 2, seed=6)
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), 3, 0)
    with pytest.raises(ValueError):
        linpevi_advplus(data.subset([]), unit_variance(2, 6), fmap, 1.0, 0.0)
    small = tabular_to_linear(random_tabular_mdp(2, 2, 2, seed=0))
    bad = gen_offline(env, uniform_policy(env), 30, 0)
    with pytest.raises(ValueError):
        first_pass_values(bad, small, 1.0, 0.0)


def test_pessimism_over_100_seeded_runs():
    cfg = RappelConfig()  # theory radius
    env = random_tabular_mdp(3, 2, 3, seed=7)
    fmap = tabular_to_linear(env)
    held = 0
    for seed in range(100):
        data = gen_offline(env, uniform_policy(env), 60, seed)
        plan, _ = plan_offline(data, fmap, cfg, env.horizon)
        v_hat = float(env.initial @ plan.V[0])
        v_true = eval_policy_exact(env, plan.policy())[2]
        held += v_hat <= v_true
    assert held >= 95


def test_pessimism_practical_radius_with_slack():
    cfg = RappelConfig.practical()
    env = random_tabular_mdp(3, 2, 3, seed=8)
    fmap = tabular_to_linear(env)
    for seed in range(50):
        data = gen_offline(env, uniform_policy(env), 200, seed)
        plan, info = plan_offline(data, fmap, cfg, env.horizon)
        assert info["beta2"] > 0
        v_true = eval_policy_exact(env, plan.policy())[2]
        assert float(env.initial @ plan.V[0]) <= v_true + 0.5
        assert v_true <= optimal_value(env) + 1e-12


def test_radius_formula():
    assert pessimism_radius(1.0, 4, 3, 100, 0.05) == pytest.approx(2 * np.log(4 * 3 * 100 / 0.05))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(2, 30), st.floats(0.0, 3.0), st.integers(0, 999))
def test_property_clamp_and_variance_ranges(S, A, H, n, beta, seed):
    env = random_tabular_mdp(S, A, H, seed)
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), n, seed)
    Vp = first_pass_values(data, fmap, 1 / H**2, beta)
    for h in range(H):
        assert np.all((Vp[h] >= 0) & (Vp[h] <= H - h))
    model = estimate_variance(data, Vp, fmap, 1 / H**2, c_var=0.0)
    plan = linpevi_advplus(data, model, fmap, 1 / H**2, beta)
    for h in range(H):
        s2 = model.table(fmap, h)
        assert np.all((s2 >= 1) & (s2 <= H**2))
        q = plan.qfunc.table(fmap, h)
        assert np.all((q >= 0) & (q <= H - h))
        assert np.all(q <= plan.qfunc.unpenalized(fmap, h) + 1e-12)
        assert_allclose(q, plan.Q[h])
