"""Trajectories, behavior-policy rollouts and offline datasets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import TabularMDP

FORMAT_VERSION = 1
LABELS = ("offline", "online", "exploration")


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    label: str = "offline"
    id: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise ValueError("states, actions and rewards must have equal length")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def ret(self) -> float:
        return float(self.rewards.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Trajectory)
            and self.label == other.label
            and self.id == other.id
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )


@dataclass(eq=False)
class Dataset:
    env_fingerprint: str
    horizon: int
    trajectories: list[Trajectory] = field(default_factory=list)
    feature_map_ref: str = ""

    def __post_init__(self):
        for t in self.trajectories:
            if len(t) != self.horizon:
                raise ValueError(f"trajectory {t.id} has length {len(t)}, expected {self.horizon}")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def n_off(self) -> int:
        return sum(t.label == "offline" for t in self.trajectories)

    @property
    def n_on(self) -> int:
        return len(self) - self.n_off

    def merged(self, other: Dataset) -> Dataset:
        if other.env_fingerprint != self.env_fingerprint or other.horizon != self.horizon:
            raise ValueError("datasets come from different environments")
        return Dataset(self.env_fingerprint, self.horizon, self.trajectories + other.trajectories, self.feature_map_ref)

    def subset(self, idx) -> Dataset:
        return Dataset(self.env_fingerprint, self.horizon, [self.trajectories[i] for i in idx], self.feature_map_ref)

    def arrays(self):
        """``(states, actions, rewards)`` stacked to shape ``(N, H)``."""
        if not self.trajectories:
            H = self.horizon
            return np.zeros((0, H), np.int64), np.zeros((0, H), np.int64), np.zeros((0, H))
        return (
            np.stack([t.states for t in self.trajectories]),
            np.stack([t.actions for t in self.trajectories]),
            np.stack([t.rewards for t in self.trajectories]),
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.env_fingerprint == other.env_fingerprint
            and self.horizon == other.horizon
            and self.feature_map_ref == other.feature_map_ref
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.trajectories, other.trajectories))
        )


def empty_dataset(env: TabularMDP, feature_map_ref: str = "") -> Dataset:
    return Dataset(env.fingerprint, env.horizon, [], feature_map_ref)


def uniform_policy(env: TabularMDP) -> np.ndarray:
    H, S, A = env.horizon, env.num_states, env.num_actions
    return np.full((H, S, A), 1.0 / A)


def deterministic_policy(actions: np.ndarray, num_actions: int) -> np.ndarray:
    """One-hot ``(H, S, A)`` policy from an ``(H, S)`` action table."""
    actions = np.asarray(actions, dtype=np.int64)
    return np.eye(num_actions)[actions]


def sample_action(row: np.ndarray, u: float) -> int:
    if abs(row.sum() - 1.0) > 1e-9 or np.any(row < 0):
        raise ValueError("policy row is not a probability distribution")
    idx = int(np.searchsorted(np.cumsum(row), u, side="right"))
    idx = min(idx, len(row) - 1)
    while idx > 0 and row[idx] == 0:
        idx -= 1
    return idx


def rollout(env: TabularMDP, policy: np.ndarray, rng: np.random.Generator, label: str = "offline", traj_id: int = 0) -> Trajectory:
    """One episode under ``policy[h, s, :]``.

    Each step draws exactly two uniforms (action, then transition), so two
    policies run from the same generator see common random numbers.
    """
    H = env.horizon
    if policy.shape != (H, env.num_states, env.num_actions):
        raise ValueError(f"policy must have shape {(H, env.num_states, env.num_actions)}")
    states = np.empty(H, np.int64)
    actions = np.empty(H, np.int64)
    rewards = np.empty(H)
    s = env.sample_initial(rng)
    for h in range(H):
        a = sample_action(policy[h, s], rng.random())
        states[h], actions[h] = s, a
        rewards[h] = env.rewards[h, s, a]
        s = env.sample_next(h, s, a, rng)
    return Trajectory(states, actions, rewards, label, traj_id)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def gen_offline(env: TabularMDP, behavior_policy: np.ndarray, n_off: int, seed: int, feature_map_ref: str = "", label: str = "offline") -> Dataset:
    if n_off < 1:
        raise ValueError("n_off must be at least 1")
    trajs = [rollout(env, behavior_policy, trajectory_rng(seed, i), label, i) for i in range(n_off)]
    return Dataset(env.fingerprint, env.horizon, trajs, feature_map_ref)


def split(dataset: Dataset, fraction: float = 0.5, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded split by trajectory into ``(D, D')`` with ``|D| = round(fraction * N)``."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_first = int(math.floor(fraction * n + 0.5))
    if n_first == 0 or n_first == n:
        raise ValueError(f"split of {n} trajectories at {fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(sorted(perm[:n_first])), dataset.subset(sorted(perm[n_first:]))


def save(dataset: Dataset, path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "env_fingerprint": dataset.env_fingerprint,
        "H": dataset.horizon,
        "feature_map_ref": dataset.feature_map_ref,
    }
    lines = [json.dumps(header)]
    for t in dataset.trajectories:
        steps = [
            {"h": h + 1, "s": int(s), "a": int(a), "r": float(r)}
            for h, (s, a, r) in enumerate(zip(t.states, t.actions, t.rewards))
        ]
        lines.append(json.dumps({"id": t.id, "label": t.label, "steps": steps}))
    Path(path).write_text("\n".join(lines) + "\n")


def load(path, env: TabularMDP | None = None) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: missing header")
    try:
        header = json.loads(lines[0])
        fingerprint, H = header["env_fingerprint"], int(header["H"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"line 1: malformed header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"line 1: unsupported version {header.get('version')!r}")
    if env is not None and env.fingerprint != fingerprint:
        raise ValueError(f"dataset fingerprint {fingerprint} does not match environment {env.fingerprint}")
    trajs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            steps = rec["steps"]
            if [st["h"] for st in steps] != list(range(1, H + 1)):
                raise ValueError(f"step indices must run 1..{H}")
            trajs.append(
                Trajectory(
                    [st["s"] for st in steps],
                    [st["a"] for st in steps],
                    [st["r"] for st in steps],
                    rec["label"],
                    int(rec["id"]),
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from None
    return Dataset(fingerprint, H, trajs, header.get("feature_map_ref", ""))


def save_policy(actions: np.ndarray, path) -> None:
    """Deterministic policy as text lines ``h s a`` with ``h`` 1-based."""
    actions = np.asarray(actions, dtype=np.int64)
    lines = [f"{h + 1} {s} {int(a)}" for h in range(actions.shape[0]) for s, a in enumerate(actions[h])]
    Path(path).write_text("\n".join(lines) + "\n")


def load_policy(path, horizon: int, num_states: int) -> np.ndarray:
    actions = np.full((horizon, num_states), -1, dtype=np.int64)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            h, s, a = (int(x) for x in line.split())
            actions[h - 1, s] = a
        except (ValueError, IndexError):
            raise DatasetFormatError(f"line {lineno}: expected 'h s a' within range") from None
    if np.any(actions < 0):
        raise DatasetFormatError("policy file does not cover every (h, s)")
    return actions
