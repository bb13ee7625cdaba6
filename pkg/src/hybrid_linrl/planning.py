"""Variance-aware pessimistic value iteration on a fixed dataset.

The planner runs in three passes over a split dataset ``(D, D')``:

1. an unweighted pessimistic least-squares value iteration on ``D'`` gives
   auxiliary values ``V'``;
2. ridge regressions of ``V'_{h+1}`` and ``V'_{h+1}^2`` on ``D'`` give a
   conditional-variance model ``sigma^2_h(s, a) in [1, H^2]``;
3. a ``1 / sigma^2``-weighted pessimistic value iteration on ``D`` gives the
   output policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .features import FeatureMap
from .linalg import CovarianceAccumulator


@dataclass
class LinearQFunction:
    """``Q_h(s, a) = clamp(phi^T w_h + sign * beta * ||phi||_{Sigma_h^{-1}}, 0, H - h)``."""

    weights: np.ndarray  # (H, d)
    bonus_coeff: float
    accs: list[CovarianceAccumulator]
    sign: int = -1  # -1 pessimistic, +1 optimistic

    @property
    def horizon(self) -> int:
        return len(self.weights)

    def table(self, fmap: FeatureMap, h: int) -> np.ndarray:
        linear = fmap.table @ self.weights[h]
        q = linear + self.sign * self.bonus_coeff * self.accs[h].bonuses(fmap.table)
        return np.clip(q, 0.0, self.horizon - h)

    def unpenalized(self, fmap: FeatureMap, h: int) -> np.ndarray:
        return np.clip(fmap.table @ self.weights[h], 0.0, self.horizon - h)


@dataclass
class VarianceModel:
    beta1: np.ndarray  # (H, d) regression of V'_{h+1}
    beta2: np.ndarray  # (H, d) regression of V'_{h+1}^2
    correction: float

    @property
    def horizon(self) -> int:
        return len(self.beta1)

    def table(self, fmap: FeatureMap, h: int) -> np.ndarray:
        H = self.horizon
        second = np.clip(fmap.table @ self.beta2[h], 0.0, H**2)
        first = np.clip(fmap.table @ self.beta1[h], 0.0, H)
        return np.maximum(1.0, second - first**2 - self.correction)

    def at(self, fmap: FeatureMap, h: int, states, actions) -> np.ndarray:
        return self.table(fmap, h)[states, actions]


@dataclass
class Plan:
    actions: np.ndarray  # (H, S) greedy actions
    Q: np.ndarray  # (H, S, A)
    V: np.ndarray  # (H + 1, S)
    qfunc: LinearQFunction

    def policy(self) -> np.ndarray:
        A = self.Q.shape[2]
        return np.eye(A)[self.actions]


def greedy(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax with ties to the lowest action id."""
    return np.argmax(q, axis=-1)


def _check(dataset: Dataset, fmap: FeatureMap) -> None:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    states, actions, _ = dataset.arrays()
    if states.max() >= fmap.num_states or actions.max() >= fmap.num_actions:
        raise ValueError("dataset refers to states or actions outside the feature map")


def _backward_pass(dataset: Dataset, fmap: FeatureMap, lam: float, beta: float, sigma2=None) -> Plan:
    states, actions, rewards = dataset.arrays()
    N, H = states.shape
    d = fmap.dim
    V = np.zeros((H + 1, fmap.num_states))
    Q = np.zeros((H, fmap.num_states, fmap.num_actions))
    W = np.zeros((H, d))
    accs = []
    for h in range(H - 1, -1, -1):
        X = fmap.table[states[:, h], actions[:, h]]
        y = rewards[:, h] + (V[h + 1][states[:, h + 1]] if h + 1 < H else 0.0)
        wts = np.ones(N) if sigma2 is None else 1.0 / sigma2.at(fmap, h, states[:, h], actions[:, h])
        acc = CovarianceAccumulator(d, lam)
        acc.add_matrix((X * wts[:, None]).T @ X)
        acc.target = X.T @ (wts * y)
        W[h] = acc.solve()
        accs.append(acc)
        Q[h] = np.clip(fmap.table @ W[h] - beta * acc.bonuses(fmap.table), 0.0, H - h)
        V[h] = Q[h].max(axis=1)
    accs.reverse()
    return Plan(greedy(Q), Q, V, LinearQFunction(W, beta, accs, sign=-1))


def first_pass_values(d_prime: Dataset, fmap: FeatureMap, lam: float, beta1: float) -> np.ndarray:
    """Unweighted pessimistic LSVI values ``V'`` of shape ``(H + 1, S)``."""
    _check(d_prime, fmap)
    return _backward_pass(d_prime, fmap, lam, beta1).V


def variance_correction(c_var: float, d: int, H: int, N: int) -> float:
    return c_var * d * H**3 / math.sqrt(max(N, 1))


def estimate_variance(d_prime: Dataset, vhat_prime: np.ndarray, fmap: FeatureMap, lam: float, c_var: float = 0.01, n_total: int | None = None) -> VarianceModel:
    _check(d_prime, fmap)
    states, actions, _ = d_prime.arrays()
    N, H = states.shape
    d = fmap.dim
    beta1 = np.zeros((H, d))
    beta2 = np.zeros((H, d))
    for h in range(H - 1):
        X = fmap.table[states[:, h], actions[:, h]]
        v_next = vhat_prime[h + 1][states[:, h + 1]]
        acc = CovarianceAccumulator(d, lam)
        acc.add_matrix(X.T @ X)
        beta1[h] = acc.solve(X.T @ v_next)
        beta2[h] = acc.solve(X.T @ v_next**2)
    corr = variance_correction(c_var, d, H, N if n_total is None else n_total)
    return VarianceModel(beta1, beta2, corr)


def linpevi_advplus(d: Dataset, variance: VarianceModel, fmap: FeatureMap, lam: float, beta2: float) -> Plan:
    _check(d, fmap)
    return _backward_pass(d, fmap, lam, beta2, sigma2=variance)


def pessimism_radius(c_b: float, d: int, H: int, N: int, delta: float) -> float:
    return c_b * math.sqrt(d) * math.log(d * H * max(N, 1) / delta)
