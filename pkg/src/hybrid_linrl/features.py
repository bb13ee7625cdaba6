"""Feature maps phi(h, s, a) for tabular environments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import TabularMDP
from .linalg import eig_topk, read_matrix, write_matrix

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Feature table ``table[s, a] -> R^d``, shared by every step ``h``.

    ``projection`` (``d x D``, orthonormal rows) is set for projected maps and
    records how the table was derived from a ``D``-dimensional base map.
    """

    table: np.ndarray
    kind: str = "one-hot"
    projection: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.table.shape[-1]

    @property
    def ambient_dim(self) -> int:
        return self.dim

    @property
    def num_states(self) -> int:
        return self.table.shape[0]

    @property
    def num_actions(self) -> int:
        return self.table.shape[1]

    def evaluate(self, h: int, s: int, a: int) -> np.ndarray:
        return self.table[s, a]

    def __call__(self, h: int, s: int, a: int) -> np.ndarray:
        return self.table[s, a]

    def flat(self) -> np.ndarray:
        """All features as an ``(S * A, d)`` matrix, row ``s * A + a``."""
        return self.table.reshape(-1, self.dim)

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.table, axis=-1)))

    @property
    def ref(self) -> str:
        return f"{self.kind}:{self.dim}"


def tabular_to_linear(env: TabularMDP) -> FeatureMap:
    S, A = env.num_states, env.num_actions
    table = np.eye(S * A).reshape(S, A, S * A)
    return FeatureMap(table, kind="one-hot")


def feature_gram(fmap: FeatureMap, dataset) -> tuple[np.ndarray, int]:
    """Sum of ``phi phi^T`` over every (trajectory, step) of ``dataset`` and the sample count."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    states = np.concatenate([t.states for t in dataset.trajectories])
    actions = np.concatenate([t.actions for t in dataset.trajectories])
    X = fmap.table[states, actions]
    return X.T @ X, len(states)


def project_features(base: FeatureMap, offline, k: int) -> FeatureMap:
    """Project onto the top-``k`` eigenvectors of the offline feature covariance."""
    gram, n = feature_gram(base, offline)
    cov = gram / n
    if not 1 <= k <= base.dim:
        raise ValueError(f"k must lie in [1, {base.dim}], got {k}")
    vals_all = np.linalg.eigvalsh(cov)
    rank = int(np.sum(vals_all > RANK_TOL * max(1.0, float(vals_all[-1]))))
    if k > rank:
        raise ValueError(f"k={k} exceeds the rank {rank} of the offline feature covariance")
    _, vecs = eig_topk(cov, k)
    return projected_map(base, vecs.T)


def projected_map(base: FeatureMap, projection: np.ndarray) -> FeatureMap:
    projection = np.asarray(projection, dtype=float)
    gram = projection @ projection.T
    if np.max(np.abs(gram - np.eye(len(projection)))) > 1e-8:
        raise ValueError("projection rows must be orthonormal")
    return FeatureMap(base.table @ projection.T, kind="projected", projection=projection)


def save_projection(fmap: FeatureMap, path) -> None:
    if fmap.projection is None:
        raise ValueError("feature map has no projection")
    write_matrix(path, fmap.projection)


def load_projection(base: FeatureMap, path) -> FeatureMap:
    return projected_map(base, read_matrix(path))
