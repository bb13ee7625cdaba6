"""Exact backward induction, occupancy measures and Monte Carlo evaluation."""

from __future__ import annotations

import math

import numpy as np

from .dataset import rollout
from .envs import TabularMDP


def value_iteration(env: TabularMDP, rewards: np.ndarray | None = None):
    """Optimal ``(Q, V, greedy actions)``; ``V`` has shape ``(H + 1, S)`` with ``V[H] = 0``.

    Ties in the greedy action go to the lowest action id.
    """
    R = env.rewards if rewards is None else rewards
    H, S, A = env.horizon, env.num_states, env.num_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = R[h] + env.transitions[h] @ V[h + 1]
        V[h] = Q[h].max(axis=1)
    return Q, V, Q.argmax(axis=2)


def eval_policy_exact(env: TabularMDP, policy: np.ndarray):
    """``(Q, V, v1)`` of a stochastic ``(H, S, A)`` policy; ``v1 = E_rho V[0]``."""
    H, S, A = env.horizon, env.num_states, env.num_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = env.rewards[h] + env.transitions[h] @ V[h + 1]
        V[h] = np.sum(policy[h] * Q[h], axis=1)
    return Q, V, float(env.initial @ V[0])


def optimal_value(env: TabularMDP) -> float:
    _, V, _ = value_iteration(env)
    return float(env.initial @ V[0])


def occupancy(env: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """State-action occupancy ``d[h, s, a] = P(s_h = s, a_h = a)``."""
    H = env.horizon
    d = np.zeros((H, env.num_states, env.num_actions))
    mu = env.initial.copy()
    for h in range(H):
        d[h] = mu[:, None] * policy[h]
        mu = np.einsum("sa,sat->t", d[h], env.transitions[h])
    return d


def eval_policy_mc(env: TabularMDP, policy: np.ndarray, n: int, seed: int):
    """Mean return and its standard error over ``n`` seeded rollouts."""
    if n < 2:
        raise ValueError("need at least two rollouts for a standard error")
    rng = np.random.default_rng(seed)
    returns = np.array([rollout(env, policy, rng).ret for _ in range(n)])
    return float(returns.mean()), float(returns.std(ddof=1) / math.sqrt(n))
