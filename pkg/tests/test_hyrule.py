from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from hybrid_linrl.dataset import Dataset, Trajectory, gen_offline, uniform_policy
from hybrid_linrl.envs import TabularMDP, bandit_mdp, random_tabular_mdp
from hybrid_linrl.features import FeatureMap, tabular_to_linear
from hybrid_linrl.hyrule import (
    HyruleConfig,
    HyruleState,
    adversarial_actions,
    hyrule_run,
    radii,
    warm_start,
)


def scalar_env(H=1):
    return TabularMDP(np.ones((H, 1, 1, 1)), np.full((H, 1, 1), 0.5), np.ones(1))


def test_cold_start_is_exact_initialization():
    env = random_tabular_mdp(3, 2, 4, seed=0)
    fmap = tabular_to_linear(env)
    state = warm_start(env, None, fmap, HyruleConfig(lam=0.7))
    assert np.all(state.Q == 4) and np.all(state.Qc == 0)
    for acc in state.accs:
        assert_allclose(acc.matrix, 0.7 * np.eye(6))
    assert state.t_last == 0 and state.switches == 0


def test_single_offline_episode_scalar_covariance():
    env = scalar_env(H=1)
    fmap = FeatureMap(np.ones((1, 1, 1)))
    data = Dataset(env.fingerprint, 1, [Trajectory([0], [0], [0.5])])
    cfg = HyruleConfig.practical()
    cold = warm_start(env, None, fmap, cfg, n_online=2)  # same total N as one offline + one online
    terms = cold.estimate_sigma(np.ones(1), 0)
    state = warm_start(env, data, fmap, cfg, n_online=1)
    assert state.accs[0].matrix[0, 0] == pytest.approx(1.0 + terms.sigma_bar**-2)
    assert terms.sigma_bar >= 1.0


def test_warm_start_bonuses_dominated_by_cold():
    env = random_tabular_mdp(4, 2, 3, seed=1)
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), 30, 0)
    cfg = HyruleConfig.practical()
    cold = warm_start(env, None, fmap, cfg)
    warm = warm_start(env, data, fmap, cfg)
    for h in range(3):
        assert np.all(warm.bonus_table(h) <= cold.bonus_table(h) + 1e-12)
    assert warm.t_last == 0


def test_warm_start_fingerprint_mismatch():
    env = random_tabular_mdp(3, 2, 2, seed=1)
    data = gen_offline(random_tabular_mdp(3, 2, 2, seed=2), uniform_policy(env), 3, 0)
    with pytest.raises(ValueError):
        warm_start(env, data, tabular_to_linear(env), HyruleConfig())


def test_sigma_floor_fresh_state():
    H = 4
    env = TabularMDP(np.ones((H, 1, 1, 1)), np.zeros((H, 1, 1)), np.ones(1))
    fmap = FeatureMap(np.ones((1, 1, 1)))
    state = HyruleState(fmap, env.rewards, HyruleConfig(c1=1e-9, c2=1e-9, c3=1e-9, c_sigma=1e-9), 10)
    terms = state.estimate_sigma(np.ones(1), 0)
    assert terms.sigma >= 2.0 and terms.sigma_bar >= 2.0


def test_zero_gap_gives_zero_d():
    env = random_tabular_mdp(3, 2, 3, seed=2)
    fmap = tabular_to_linear(env)
    state = HyruleState(fmap, env.rewards, HyruleConfig(c2=0.0), 10)
    state.w_hat[:] = state.w_check[:] = 0.3
    assert state.estimate_sigma(fmap.table[1, 0], 1).D == 0.0


def test_weight_bound_on_random_snapshot():
    env = random_tabular_mdp(4, 3, 4, seed=3)
    fmap = tabular_to_linear(env)
    state = warm_start(env, gen_offline(env, uniform_policy(env), 20, 0), fmap, HyruleConfig.practical())
    rng = np.random.default_rng(0)
    for _ in range(50):
        phi = rng.normal(size=fmap.dim)
        phi /= max(1.0, np.linalg.norm(phi))
        terms = state.estimate_sigma(phi, int(rng.integers(4)))
        assert terms.weight * (phi @ phi) <= 1 / 4 + 1e-12
        assert terms.sigma_bar >= terms.sigma and terms.sigma_bar >= 2.0


def test_sigma_bar_theory_floor():
    env = random_tabular_mdp(2, 2, 2, seed=4)
    fmap = tabular_to_linear(env)
    state = HyruleState(fmap, env.rewards, HyruleConfig.theory(), 10)
    phi = fmap.table[0, 1]
    terms = state.estimate_sigma(phi, 0)
    floor = 2 * fmap.dim**3 * 4 * math.sqrt(state.accs[0].bonus(phi))
    assert terms.sigma_bar >= floor - 1e-9


def test_scalar_switch_after_doubling():
    env = scalar_env(H=1)
    fmap = FeatureMap(np.ones((1, 1, 1)))
    state = HyruleState(fmap, env.rewards, HyruleConfig(lam=1.0), 10)
    assert not state.maybe_switch(1)  # no data since the reference
    state.accs[0].update(np.ones(1), 1.1)
    assert state.accs[0].matrix[0, 0] == pytest.approx(2.1)
    assert state.maybe_switch(2)
    assert state.t_last == 2 and state.switches == 1
    assert not state.maybe_switch(3)


def test_switch_count_bound():
    env = random_tabular_mdp(3, 2, 3, seed=5)
    fmap = tabular_to_linear(env)
    state = warm_start(env, None, fmap, HyruleConfig.practical(), n_online=300)
    start = np.array([acc.log_det for acc in state.accs])
    hyrule_run(env, state, 300, np.random.default_rng(0))
    end = np.array([acc.log_det for acc in state.accs])
    bound = np.sum((end - start) / math.log(2)) + env.horizon
    assert state.switches <= bound


def test_cold_first_action_is_zero():
    env = random_tabular_mdp(3, 3, 2, seed=6)
    state = warm_start(env, None, tabular_to_linear(env), HyruleConfig())
    traj, _ = state.run_episode(env, np.random.default_rng(0), 1)
    assert traj.actions[0] == 0
    res = hyrule_run(env, warm_start(env, None, tabular_to_linear(env), HyruleConfig()), 1, np.random.default_rng(0))
    assert len(res.returns) == 1


def test_bandit_regret_is_gap_times_suboptimal_pulls():
    env = bandit_mdp([0.25, 0.75])
    state = warm_start(env, None, tabular_to_linear(env), HyruleConfig.practical(), n_online=200)
    res = hyrule_run(env, state, 200, np.random.default_rng(0))
    pulls0 = np.sum(res.returns == 0.25)
    assert res.cumulative_regret[-1] == pytest.approx(0.5 * pulls0)
    assert res.returns[0] == 0.25  # first pull is the lowest id


def test_rows_and_policies():
    env = random_tabular_mdp(3, 2, 2, seed=7)
    state = warm_start(env, None, tabular_to_linear(env), HyruleConfig.practical(), n_online=20)
    res = hyrule_run(env, state, 20, np.random.default_rng(0))
    rows = list(res.rows())
    assert len(rows) == 20 and rows[0][0] == 1
    assert np.array_equal(res.final_policy(), state.greedy_actions())
    assert adversarial_actions(state).shape == (2, 3)
    no_regret = hyrule_run(env, state, 2, np.random.default_rng(0), exact_regret=False)
    with pytest.raises(ValueError):
        no_regret.cumulative_regret


def test_config_guards_and_radii():
    with pytest.raises(ValueError):
        HyruleConfig(lam=0.0)
    with pytest.raises(ValueError):
        HyruleConfig(delta=1.5)
    b, bb, bt = radii(4, 3, 100, 1.0, 0.05, 1, 1, 1)
    assert b == pytest.approx(3 * 2 + 2 * math.log(1 + 4 * 100 * 3 / 0.05))
    assert bb == pytest.approx(3 * 2 + math.sqrt(64 * 9) * math.log(4 * 3 * 100 / 0.05))
    assert bt == pytest.approx(9 * 2 + math.sqrt(64 * 81) * math.log(4 * 3 * 100 / 0.05))


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(0, 999), st.integers(0, 20))
def test_property_monotone_q_and_weight_bound(S, A, H, seed, n_off):
    env = random_tabular_mdp(S, A, H, seed)
    fmap = tabular_to_linear(env)
    data = gen_offline(env, uniform_policy(env), n_off, seed) if n_off else None
    state = warm_start(env, data, fmap, HyruleConfig.practical(), n_online=40)
    prev = [state.Q.copy(), state.Qc.copy()]

    def check(st_, t):
        assert np.all(st_.Q <= prev[0] + 1e-12)
        assert np.all(st_.Qc >= prev[1] - 1e-12)
        assert np.all((st_.Q >= 0) & (st_.Q <= H)) and np.all((st_.Qc >= 0) & (st_.Qc <= H))
        prev[0], prev[1] = st_.Q.copy(), st_.Qc.copy()

    hyrule_run(env, state, 40, np.random.default_rng(seed), on_episode=check)
    assert state.max_weight <= 1 / H + 1e-12
