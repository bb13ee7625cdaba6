"""Finite-horizon tabular MDPs and episode stepping."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

ROW_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Episodic MDP with kernels ``P[h, s, a, s']`` and rewards ``R[h, s, a]``.

    Steps are indexed ``h = 0 .. H-1`` internally; files and reports use 1..H.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    initial: np.ndarray
    reward_range: tuple[float, float] = (0.0, 1.0)
    name: str = "tabular"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P, R, rho = self.transitions, self.rewards, self.initial
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise ValueError(f"transitions must have shape (H, S, A, S), got {P.shape}")
        H, S, A, _ = P.shape
        if H < 1 or S < 1 or A < 1:
            raise ValueError("horizon, states and actions must all be positive")
        if R.shape != (H, S, A):
            raise ValueError(f"rewards must have shape {(H, S, A)}, got {R.shape}")
        if rho.shape != (S,):
            raise ValueError(f"initial distribution must have shape ({S},)")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=-1) - 1.0)) > ROW_TOL:
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial distribution must be a probability vector")
        lo, hi = self.reward_range
        if np.any(R < lo - 1e-12) or np.any(R > hi + 1e-12) or not np.all(np.isfinite(R)):
            raise ValueError(f"rewards must lie in [{lo}, {hi}]")

    @property
    def horizon(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[2]

    @cached_property
    def _cdf(self) -> np.ndarray:
        return np.cumsum(self.transitions, axis=-1)

    @cached_property
    def _init_cdf(self) -> np.ndarray:
        return np.cumsum(self.initial)

    def sample_initial(self, rng: np.random.Generator) -> int:
        return _inverse_cdf(self._init_cdf, rng.random())

    def sample_next(self, h: int, s: int, a: int, rng: np.random.Generator) -> int:
        return _inverse_cdf(self._cdf[h, s, a], rng.random())

    @cached_property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.transitions.shape}|{self.reward_range}".encode())
        for arr in (self.transitions, self.rewards, self.initial):
            digest.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return digest.hexdigest()[:16]

    def reachable(self) -> np.ndarray:
        """Boolean ``(H, S)`` mask of states reachable at each step under some policy."""
        H = self.horizon
        mask = np.zeros((H, self.num_states), dtype=bool)
        mask[0] = self.initial > 0
        for h in range(1, H):
            nxt = self.transitions[h - 1][mask[h - 1]].reshape(-1, self.num_states)
            mask[h] = np.any(nxt > 0, axis=0)
        return mask

    def is_stationary(self) -> bool:
        P, R = self.transitions, self.rewards
        return bool(np.array_equal(P, np.broadcast_to(P[0], P.shape)) and np.array_equal(R, np.broadcast_to(R[0], R.shape)))

    def to_dict(self) -> dict:
        stationary = self.is_stationary()
        P = self.transitions[0] if stationary else self.transitions
        R = self.rewards[0] if stationary else self.rewards
        return {
            "name": self.name,
            "horizon": self.horizon,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "reward_range": list(self.reward_range),
            "stationary": stationary,
            "transitions": P.tolist(),
            "rewards": R.tolist(),
            "initial": self.initial.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> TabularMDP:
        P = np.array(data["transitions"], dtype=float)
        R = np.array(data["rewards"], dtype=float)
        if data.get("stationary"):
            H = int(data["horizon"])
            P = np.broadcast_to(P, (H,) + P.shape)
            R = np.broadcast_to(R, (H,) + R.shape)
        return cls(
            transitions=P,
            rewards=R,
            initial=np.array(data["initial"], dtype=float),
            reward_range=tuple(data.get("reward_range", (0.0, 1.0))),
            name=data.get("name", "tabular"),
            meta=data.get("meta", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> TabularMDP:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _inverse_cdf(cdf: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(cdf, u, side="right"))
    # guard against round-off at the top of the cdf and zero-mass tails
    idx = min(idx, len(cdf) - 1)
    while idx > 0 and cdf[idx] == cdf[idx - 1]:
        idx -= 1
    return idx


@dataclass(frozen=True)
class EpisodeState:
    h: int
    state: int


def reset(env: TabularMDP, rng: np.random.Generator) -> EpisodeState:
    return EpisodeState(0, env.sample_initial(rng))


def step(env: TabularMDP, ep: EpisodeState, action: int, rng: np.random.Generator):
    """Advance one step; returns ``(reward, next_episode_state, terminal)``."""
    if ep.h >= env.horizon:
        raise ValueError("episode already finished")
    if not 0 <= action < env.num_actions:
        raise ValueError(f"action {action} out of range [0, {env.num_actions})")
    reward = float(env.rewards[ep.h, ep.state, action])
    nxt = env.sample_next(ep.h, ep.state, action, rng)
    h = ep.h + 1
    return reward, EpisodeState(h, nxt), h == env.horizon


def random_tabular_mdp(num_states: int, num_actions: int, horizon: int, seed: int) -> TabularMDP:
    """Dirichlet(1) transition rows, uniform [0, 1] rewards, Dirichlet(1) start."""
    if min(num_states, num_actions, horizon) < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(num_states), size=(horizon, num_states, num_actions))
    P /= P.sum(axis=-1, keepdims=True)
    R = rng.random((horizon, num_states, num_actions))
    rho = rng.dirichlet(np.ones(num_states))
    rho /= rho.sum()
    return TabularMDP(P, R, rho, name=f"random-{num_states}x{num_actions}x{horizon}-{seed}")


def chain_mdp(num_states: int, horizon: int, reward_state: int | None = None) -> TabularMDP:
    """Deterministic chain: action 1 moves right, action 0 moves left; start at 0.

    Reward 1 for any action taken in ``reward_state`` (default: last state).
    """
    S = num_states
    P = np.zeros((horizon, S, 2, S))
    for s in range(S):
        P[:, s, 0, max(s - 1, 0)] = 1.0
        P[:, s, 1, min(s + 1, S - 1)] = 1.0
    R = np.zeros((horizon, S, 2))
    R[:, S - 1 if reward_state is None else reward_state, :] = 1.0
    rho = np.zeros(S)
    rho[0] = 1.0
    return TabularMDP(P, R, rho, name=f"chain-{S}x{horizon}")


def bandit_mdp(means, horizon: int = 1) -> TabularMDP:
    """Single-state MDP whose action rewards are ``means``."""
    means = np.asarray(means, dtype=float)
    A = len(means)
    P = np.ones((horizon, 1, A, 1))
    R = np.broadcast_to(means, (horizon, 1, A)).copy()
    return TabularMDP(P, R, np.ones(1), name=f"bandit-{A}")


def load_env(path) -> TabularMDP:
    return TabularMDP.load(path)
