"""Reward-agnostic exploration by Frank-Wolfe on a soft-max coverage objective.

For a targeted step ``h`` and epoch ``i`` the objective is

    f_i(L) = eta_i^-1 log sum_{phi in Phi_h} exp(eta_i phi^T A_i(L)^-1 phi),
    A_i(L) = L + (T_i K_i)^-1 (lam I + Lambda_prior),

with ``eta_i = 2^(2i/5)`` and ``T_i = K_i = 2^i``. ``L`` is a per-episode
(normalized) covariance. Each Frank-Wolfe iterate hands the linearized
objective to an optimistic LSVI learner as a synthetic reward at step ``h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, Trajectory, uniform_policy, rollout
from .envs import TabularMDP
from .features import FeatureMap
from .linalg import CovarianceAccumulator

EXACT_BONUS_EVERY = 256


@dataclass
class CoverageObjective:
    epoch: int
    features: np.ndarray  # (m, d) feature set Phi_h, zero rows removed
    warm: np.ndarray  # (d, d) = (T K)^-1 (lam I + prior)

    @property
    def eta(self) -> float:
        return 2.0 ** (2 * self.epoch / 5)

    @property
    def T(self) -> int:
        return 2**self.epoch

    @property
    def K(self) -> int:
        return 2**self.epoch

    def inverse(self, lam_matrix: np.ndarray) -> np.ndarray:
        A = lam_matrix + self.warm
        A = 0.5 * (A + A.T)
        if np.linalg.eigvalsh(A)[0] <= 0:
            raise np.linalg.LinAlgError("coverage matrix is singular")
        inv = np.linalg.inv(A)
        return 0.5 * (inv + inv.T)

    def quad(self, lam_matrix: np.ndarray) -> np.ndarray:
        inv = self.inverse(lam_matrix)
        return np.einsum("md,de,me->m", self.features, inv, self.features)


def _logsumexp_weights(q: np.ndarray, eta: float):
    top = float(q.max())
    e = np.exp(eta * (q - top))
    total = float(e.sum())
    return top + math.log(total) / eta, e / total


def coverage_softmax(obj: CoverageObjective, lam_matrix: np.ndarray) -> float:
    if len(obj.features) == 0:
        raise ValueError("feature set is empty")
    return _logsumexp_weights(obj.quad(lam_matrix), obj.eta)[0]


def hard_max(obj: CoverageObjective, lam_matrix: np.ndarray) -> float:
    return float(obj.quad(lam_matrix).max())


def synthetic_reward(obj: CoverageObjective, lam_matrix: np.ndarray, table: np.ndarray):
    """Normalized trace of ``-grad f`` against ``phi(s,a) phi(s,a)^T``.

    Returns ``(g, raw, all_zero)`` with ``g`` in ``[0, 1]`` of shape ``(S, A)``.
    """
    inv = obj.inverse(lam_matrix)
    q = np.einsum("md,de,me->m", obj.features, inv, obj.features)
    _, weights = _logsumexp_weights(q, obj.eta)
    proj = table @ (inv @ obj.features.T)  # (S, A, m)
    raw = (proj**2) @ weights
    top = float(raw.max())
    if top <= 0.0:
        return np.zeros_like(raw), raw, True
    return raw / top, raw, False


class OptimisticLSVI:
    """LSVI-UCB on a supplied reward table, with incrementally maintained bonuses."""

    def __init__(self, env: TabularMDP, fmap: FeatureMap, beta: float, lam: float = 1.0):
        self.env = env
        self.fmap = fmap
        self.beta = beta
        H, d = env.horizon, fmap.dim
        self.H, self.d = H, d
        self.accs = [CovarianceAccumulator(d, lam) for _ in range(H)]
        self.next_stats = np.zeros((H, d, env.num_states))
        self.bonus_sq = np.full((H, env.num_states, env.num_actions), 0.0)
        self._pending = np.zeros(H, np.int64)
        for h in range(H):
            self._exact_bonus(h)

    def _exact_bonus(self, h: int) -> None:
        self.bonus_sq[h] = self.accs[h].bonuses(self.fmap.table) ** 2
        self._pending[h] = 0

    def add(self, h: int, s: int, a: int, s_next: int | None) -> None:
        phi = self.fmap.table[s, a]
        acc = self.accs[h]
        u = acc.inverse @ phi
        denom = 1.0 + float(phi @ u)
        acc.update(phi)
        if s_next is not None and h + 1 < self.H:
            self.next_stats[h][:, s_next] += phi
        self._pending[h] += 1
        if self._pending[h] >= EXACT_BONUS_EVERY:
            self._exact_bonus(h)
        else:
            proj = self.fmap.table @ u
            self.bonus_sq[h] = np.maximum(self.bonus_sq[h] - proj**2 / denom, 0.0)

    def add_trajectory(self, traj: Trajectory) -> None:
        for h in range(self.H):
            s_next = int(traj.states[h + 1]) if h + 1 < self.H else None
            self.add(h, int(traj.states[h]), int(traj.actions[h]), s_next)

    def plan(self, reward: np.ndarray) -> np.ndarray:
        H = self.H
        Q = np.zeros((H, self.env.num_states, self.env.num_actions))
        V = np.zeros(self.env.num_states)
        for h in range(H - 1, -1, -1):
            w = self.accs[h].solve(self.next_stats[h] @ V)
            q = reward[h] + self.fmap.table @ w + self.beta * np.sqrt(self.bonus_sq[h])
            Q[h] = np.clip(q, 0.0, H)
            V = Q[h].max(axis=1)
        return Q

    def episode(self, reward: np.ndarray, rng: np.random.Generator, label: str, traj_id: int) -> Trajectory:
        Q = self.plan(reward)
        policy = np.eye(self.env.num_actions)[np.argmax(Q, axis=2)]
        traj = rollout(self.env, policy, rng, label, traj_id)
        self.add_trajectory(traj)
        return traj


def exploration_radius(c_e: float, d: int, H: int, N: int, delta: float) -> float:
    return c_e * math.sqrt(d) * math.log(d * H * max(N, 1) / delta)


def inner_regret_min(learner: OptimisticLSVI, reward: np.ndarray, K: int, rng: np.random.Generator, target_h: int, label: str = "exploration", first_id: int = 0):
    """Run ``K`` learner episodes; return the trajectories and ``sum phi phi^T`` at ``target_h``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    trajs = [learner.episode(reward, rng, label, first_id + k) for k in range(K)]
    X = learner.fmap.table[[t.states[target_h] for t in trajs], [t.actions[target_h] for t in trajs]]
    return trajs, X.T @ X


def feature_set(env: TabularMDP, fmap: FeatureMap, h: int) -> np.ndarray:
    """Distinct nonzero features of the pairs reachable at step ``h``."""
    reach = env.reachable()[h]
    feats = fmap.table[reach].reshape(-1, fmap.dim)
    feats = feats[np.linalg.norm(feats, axis=1) > 1e-12]
    if len(feats) == 0:
        return feats
    return np.unique(np.round(feats, 12), axis=0)


def max_bonus_sq(features: np.ndarray, matrix: np.ndarray) -> float:
    if len(features) == 0:
        return 0.0
    inv = np.linalg.inv(matrix)
    return float(np.einsum("md,de,me->m", features, inv, features).max())


@dataclass
class StepReport:
    h: int
    epochs: int = 0
    episodes: int = 0
    final_f: float = float("nan")
    max_bonus: float = float("nan")
    success: bool = False
    pre_met: bool = False


@dataclass
class OptcovResult:
    dataset: Dataset
    online_gram: np.ndarray  # (H, d, d) raw sum of phi phi^T of the collected data
    lambda_hat: np.ndarray  # (H, d, d) final normalized Frank-Wolfe iterate per h
    reports: list[StepReport]
    checks: list = field(default_factory=list)  # (f, hard max, eta, |Phi|) per evaluation
    trace: list = field(default_factory=list)  # (episodes, pooled 1/lmin, max_h 1/lmin)

    @property
    def coverage_unmet(self) -> bool:
        return not all(r.success for r in self.reports)

    @property
    def episodes(self) -> int:
        return len(self.dataset)


def coverage_values(online_gram: np.ndarray, offline_gram: np.ndarray, lam: float):
    """``(1/lmin of the step-pooled matrix, max_h 1/lmin)`` of ``online + offline + lam I``."""
    d = online_gram.shape[-1]
    per_h = online_gram + offline_gram + lam * np.eye(d)
    lmin_h = np.linalg.eigvalsh(per_h)[:, 0]
    pooled = online_gram.sum(axis=0) + offline_gram.sum(axis=0) + lam * np.eye(d)
    return 1.0 / float(np.linalg.eigvalsh(pooled)[0]), float(np.max(1.0 / lmin_h))


def optcov(
    env: TabularMDP,
    fmap: FeatureMap,
    lambda_off: np.ndarray,
    tau: float,
    budget: int,
    delta: float,
    rng: np.random.Generator,
    lam: float | None = None,
    c_e: float = 0.1,
    offline: Dataset | None = None,
    checkpoints=(),
    steps=None,
) -> OptcovResult:
    """Collect exploration episodes until every targeted step meets ``tau`` or the budget runs out.

    ``lambda_off`` holds the raw offline covariates ``sum phi phi^T`` per step.
    ``offline`` (optional) also warms the inner learner's regressions.
    ``checkpoints`` lists episode counts at which coverage values are traced.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    H, d = env.horizon, fmap.dim
    lam = 1.0 / H**2 if lam is None else lam
    lambda_off = np.asarray(lambda_off, dtype=float)
    if lambda_off.shape != (H, d, d):
        raise ValueError(f"lambda_off must have shape {(H, d, d)}")
    n_off = 0 if offline is None else len(offline)
    learner = OptimisticLSVI(env, fmap, exploration_radius(c_e, d, H, n_off + budget, delta))
    if offline is not None:
        for traj in offline:
            learner.add_trajectory(traj)

    eye = lam * np.eye(d)
    gram = np.zeros((H, d, d))
    lambda_hat = np.zeros((H, d, d))
    trajs: list[Trajectory] = []
    checks: list = []
    trace: list = []
    pending = sorted(int(c) for c in checkpoints)
    unif = uniform_policy(env)

    def record(traj: Trajectory) -> None:
        X = fmap.table[traj.states, traj.actions]
        gram[:] += np.einsum("hi,hj->hij", X, X)
        trajs.append(traj)
        while pending and pending[0] <= len(trajs):
            pooled, worst = coverage_values(gram, lambda_off, lam)
            trace.append((pending.pop(0), pooled, worst))

    def left() -> int:
        return budget - len(trajs)

    reports = []
    for h in range(H) if steps is None else steps:
        rep = StepReport(h)
        reports.append(rep)
        feats = feature_set(env, fmap, h)
        start = len(trajs)

        def measured() -> float:
            return max_bonus_sq(feats, gram[h] + eye + lambda_off[h])

        if measured() <= tau:
            rep.pre_met = rep.success = True
            rep.max_bonus = measured()
            continue
        i = 0
        while left() > 0:
            i += 1
            obj = CoverageObjective(i, feats, (eye + lambda_off[h] + gram[h]) / (4**i))
            K, T = obj.K, obj.T
            seed_n = min(K, left())
            seed = [rollout(env, unif, rng, "exploration", len(trajs) + k) for k in range(seed_n)]
            for traj in seed:
                learner.add_trajectory(traj)
                record(traj)
            X = fmap.table[[t.states[h] for t in seed], [t.actions[h] for t in seed]]
            lam_t = X.T @ X / seed_n
            for t in range(1, T + 1):
                if left() <= 0:
                    break
                g, _, _ = synthetic_reward(obj, lam_t, fmap.table)
                reward = np.zeros((H, env.num_states, env.num_actions))
                reward[h] = g
                k = min(K, left())
                batch, gamma = inner_regret_min(learner, reward, k, rng, h, first_id=len(trajs))
                for traj in batch:
                    record(traj)
                lam_t = (1 - 1 / (t + 1)) * lam_t + gamma / (k * (t + 1))
            lambda_hat[h] = lam_t
            f = coverage_softmax(obj, lam_t)
            checks.append((f, hard_max(obj, lam_t), obj.eta, len(feats)))
            rep.epochs, rep.final_f = i, f
            if f <= K * T * tau and measured() <= tau:
                rep.success = True
                break
        rep.episodes = len(trajs) - start
        rep.max_bonus = measured()
        if not rep.success and measured() <= tau:
            rep.success = True
    while pending:
        pooled, worst = coverage_values(gram, lambda_off, lam)
        trace.append((pending.pop(0), pooled, worst))
    data = Dataset(env.fingerprint, H, trajs, fmap.ref)
    return OptcovResult(data, gram, lambda_hat, reports, checks, trace)
