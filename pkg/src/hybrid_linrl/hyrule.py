"""Offline-warm-started LSVI-UCB++ with variance weighting and rare switching.

The learner keeps, per step ``h``, a weighted covariance ``Sigma_h`` (weights
``sigma_bar^-2``) and a next-state statistics matrix ``M_h = sum w phi e_{s'}^T``
so that the regression targets ``b = M_h V`` can be recomputed for whatever
value function ``V`` is current. Rewards are known, deterministic functions of
``(h, s, a)`` and enter the Q update directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, Trajectory
from .dynprog import value_iteration
from .envs import TabularMDP
from .features import FeatureMap
from .linalg import CovarianceAccumulator

LOG2 = math.log(2.0)
# Scales the d^3 factors in the sigma_bar floor and in D; 1.0 is the stated form.
PRACTICAL_C_SIGMA = 1e-6


@dataclass
class HyruleConfig:
    lam: float = 1.0
    delta: float = 0.05
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c_sigma: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if min(self.c1, self.c2, self.c3, self.c_sigma) < 0:
            raise ValueError("radius constants must be nonnegative")

    @classmethod
    def theory(cls, **kw) -> HyruleConfig:
        return cls(**kw)

    @classmethod
    def practical(cls, **kw) -> HyruleConfig:
        base = dict(c1=0.02, c2=0.02, c3=0.02, c_sigma=PRACTICAL_C_SIGMA)
        base.update(kw)
        return cls(**base)


def radii(d: int, H: int, N: int, lam: float, delta: float, c1: float, c2: float, c3: float):
    """Confidence radii ``(beta, beta_bar, beta_tilde)``."""
    N = max(N, 1)
    log_a = math.log(1.0 + d * N * H / (delta * lam))
    log_b = math.log(d * H * N / (delta * lam))
    beta = c1 * (H * math.sqrt(d * lam) + math.sqrt(d) * log_a)
    beta_bar = c2 * (H * math.sqrt(d * lam) + math.sqrt(d**3 * H**2) * abs(log_b))
    beta_tilde = c3 * (H**2 * math.sqrt(d * lam) + math.sqrt(d**3 * H**4) * abs(log_b))
    return beta, beta_bar, beta_tilde


@dataclass
class VarianceTerms:
    variance: float  # floored [V_bar V] estimate
    E: float
    D: float
    sigma: float
    sigma_bar: float

    @property
    def weight(self) -> float:
        return self.sigma_bar**-2


class HyruleState:
    """Per-step accumulators, optimistic and pessimistic Q tables, switching state."""

    def __init__(self, fmap: FeatureMap, rewards: np.ndarray, config: HyruleConfig, n_total: int, env_fingerprint: str = ""):
        H, S, A = rewards.shape
        if (S, A) != (fmap.num_states, fmap.num_actions):
            raise ValueError("reward table does not match the feature map")
        self.fmap = fmap
        self.rewards = rewards
        self.config = config
        self.env_fingerprint = env_fingerprint
        self.H, self.S, self.A, self.d = H, S, A, fmap.dim
        self.beta, self.beta_bar, self.beta_tilde = radii(self.d, H, n_total, config.lam, config.delta, config.c1, config.c2, config.c3)
        self.accs = [CovarianceAccumulator(self.d, config.lam) for _ in range(H)]
        self.next_stats = np.zeros((H, self.d, S))
        self.Q = np.full((H, S, A), float(H))
        self.Qc = np.zeros((H, S, A))
        self.V = np.zeros((H + 1, S))
        self.Vc = np.zeros((H + 1, S))
        self.V[:H] = H
        self.w_hat = np.zeros((H, self.d))
        self.w_check = np.zeros((H, self.d))
        self.w_tilde = np.zeros((H, self.d))
        self.ref_log_det = np.array([acc.log_det for acc in self.accs])
        self.t = 0
        self.t_last = 0
        self.switches = 0
        self.max_weight = 0.0

    # -- regression and switching -------------------------------------------------

    def should_switch(self) -> bool:
        logdets = np.array([acc.log_det for acc in self.accs])
        return bool(np.any(logdets - self.ref_log_det >= LOG2))

    def update_weights(self, switch: bool) -> None:
        """Re-solve the three regressions backward in ``h``; re-evaluate Q when switching."""
        H, table = self.H, self.fmap.table
        for h in range(H - 1, -1, -1):
            acc, M = self.accs[h], self.next_stats[h]
            self.w_hat[h] = acc.solve(M @ self.V[h + 1])
            self.w_check[h] = acc.solve(M @ self.Vc[h + 1])
            self.w_tilde[h] = acc.solve(M @ self.V[h + 1] ** 2)
            if switch:
                bon = acc.bonuses(table)
                opt = self.rewards[h] + table @ self.w_hat[h] + self.beta * bon
                pes = self.rewards[h] + table @ self.w_check[h] - self.beta_bar * bon
                self.Q[h] = np.minimum(np.minimum(opt, self.Q[h]), H)
                self.Qc[h] = np.minimum(np.maximum(np.maximum(pes, self.Qc[h]), 0.0), H)
                self.V[h] = self.Q[h].max(axis=1)
                self.Vc[h] = self.Qc[h].max(axis=1)

    def mark_switch(self, t: int) -> None:
        self.ref_log_det = np.array([acc.log_det for acc in self.accs])
        self.t_last = t
        self.switches += 1

    def maybe_switch(self, t: int) -> bool:
        switch = self.should_switch()
        self.update_weights(switch)
        if switch:
            self.mark_switch(t)
        return switch

    # -- variance-weighted accumulation -----------------------------------------

    def estimate_sigma(self, phi: np.ndarray, h: int) -> VarianceTerms:
        H, d = self.H, self.d
        cd3 = self.config.c_sigma * d**3
        b = self.accs[h].bonus(phi)
        second = min(max(float(phi @ self.w_tilde[h]), 0.0), H**2)
        first = min(max(float(phi @ self.w_hat[h]), 0.0), H)
        var = max(second - first**2, 0.0)
        E = min(self.beta_tilde * b, H**2) + min(2 * H * self.beta_bar * b, H**2)
        gap = float(phi @ (self.w_hat[h] - self.w_check[h])) + 2 * self.beta_bar * b
        D = max(min(4 * cd3 * H**2 * gap, cd3 * H**3), 0.0)
        sigma = math.sqrt(var + E + D + H)
        sigma_bar = max(sigma, math.sqrt(H), 2 * cd3 * H**2 * math.sqrt(b))
        return VarianceTerms(var, E, D, sigma, sigma_bar)

    def observe(self, h: int, s: int, a: int, s_next: int | None) -> VarianceTerms:
        phi = self.fmap.table[s, a]
        terms = self.estimate_sigma(phi, h)
        w = terms.weight
        self.accs[h].update(phi, w)
        if s_next is not None and h + 1 < self.H:
            self.next_stats[h][:, s_next] += w * phi
        self.max_weight = max(self.max_weight, w)
        return terms

    def process_trajectory(self, traj: Trajectory) -> None:
        """Replay one recorded episode through the online update path."""
        self.t += 1
        self.maybe_switch(self.t)
        for h in range(self.H):
            s_next = int(traj.states[h + 1]) if h + 1 < self.H else None
            self.observe(h, int(traj.states[h]), int(traj.actions[h]), s_next)

    # -- acting -------------------------------------------------------------------

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.Q, axis=2)

    def run_episode(self, env: TabularMDP, rng: np.random.Generator, t: int):
        """Play one greedy episode; returns ``(trajectory, mean bonus)``."""
        self.t += 1
        self.maybe_switch(t)
        H = self.H
        states = np.empty(H, np.int64)
        actions = np.empty(H, np.int64)
        rewards = np.empty(H)
        bonus_sum = 0.0
        s = env.sample_initial(rng)
        for h in range(H):
            a = int(np.argmax(self.Q[h, s]))
            rng.random()  # keep two draws per step, as in dataset.rollout
            s_next = env.sample_next(h, s, a, rng)
            states[h], actions[h], rewards[h] = s, a, env.rewards[h, s, a]
            bonus_sum += self.accs[h].bonus(self.fmap.table[s, a])
            self.observe(h, s, a, s_next)
            s = s_next
        return Trajectory(states, actions, rewards, "online", t), bonus_sum / H

    def bonus_table(self, h: int) -> np.ndarray:
        return self.accs[h].bonuses(self.fmap.table)


def warm_start(env: TabularMDP, d_off: Dataset | None, fmap: FeatureMap, config: HyruleConfig, n_online: int = 0) -> HyruleState:
    """Build the initial state by replaying offline episodes in order.

    Afterwards one forced Q evaluation applies the update formulas to the
    offline data, and the switching reference is reset so that episode 1
    compares against the post-replay covariances.
    """
    n_off = 0 if d_off is None else len(d_off)
    if d_off is not None and d_off.env_fingerprint != env.fingerprint:
        raise ValueError("offline dataset was generated on a different environment")
    state = HyruleState(fmap, env.rewards, config, n_off + n_online, env.fingerprint)
    if n_off:
        for traj in d_off:
            state.process_trajectory(traj)
        state.update_weights(switch=True)
    state.ref_log_det = np.array([acc.log_det for acc in state.accs])
    state.t = 0
    state.t_last = 0
    state.switches = 0
    return state


@dataclass
class HyruleResult:
    returns: np.ndarray
    regret: np.ndarray | None
    switches: np.ndarray
    mean_bonus: np.ndarray
    policies: list = field(default_factory=list)  # (first episode, (H, S) actions)
    state: HyruleState | None = None

    @property
    def cumulative_regret(self) -> np.ndarray:
        if self.regret is None:
            raise ValueError("regret is unavailable without an exact optimal value")
        return np.cumsum(self.regret)

    def final_policy(self) -> np.ndarray:
        return self.policies[-1][1]

    def rows(self):
        """Per-episode records ``(t, return, regret, switches_so_far, mean_bonus)``."""
        for i in range(len(self.returns)):
            reg = "" if self.regret is None else float(self.regret[i])
            yield i + 1, float(self.returns[i]), reg, int(self.switches[i]), float(self.mean_bonus[i])


def hyrule_run(env: TabularMDP, state: HyruleState, T: int, rng: np.random.Generator, exact_regret: bool = True, on_episode=None) -> HyruleResult:
    if T < 1:
        raise ValueError("T must be at least 1")
    v_star = value_iteration(env)[1][0] if exact_regret else None
    returns = np.empty(T)
    regret = np.empty(T) if exact_regret else None
    switches = np.empty(T, np.int64)
    bonus = np.empty(T)
    policies = []
    last_switches = -1
    for t in range(1, T + 1):
        traj, mb = state.run_episode(env, rng, t)
        if state.switches != last_switches:
            policies.append((t, state.greedy_actions()))
            last_switches = state.switches
        returns[t - 1] = traj.ret
        if regret is not None:
            regret[t - 1] = v_star[traj.states[0]] - traj.ret
        switches[t - 1] = state.switches
        bonus[t - 1] = mb
        if on_episode is not None:
            on_episode(state, t)
    # record the greedy policy of the final Q as the PAC output
    if not policies or not np.array_equal(policies[-1][1], state.greedy_actions()):
        policies.append((T + 1, state.greedy_actions()))
    return HyruleResult(returns, regret, switches, bonus, policies, state)


def adversarial_actions(state: HyruleState) -> np.ndarray:
    """Greedy actions for the negated unpenalized estimate ``r + w_hat^T phi``."""
    q = state.rewards + np.einsum("sad,hd->hsa", state.fmap.table, state.w_hat)
    return np.argmax(-q, axis=2)
