"""Coverage metrics, offline/online partitions and concentrability diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .dynprog import eval_policy_exact, eval_policy_mc, occupancy, value_iteration
from .envs import TabularMDP
from .features import RANK_TOL, FeatureMap, feature_gram
from .linalg import eig_topk

__all__ = [
    "Partition",
    "coverage_metrics",
    "partition_from_eigencut",
    "partial_concentrability_off",
    "partial_coverability_on",
    "coverability_check_on",
    "eval_policy_exact",
    "eval_policy_mc",
    "write_diagnostics_csv",
]

MEMBER_TOL = 1e-6
EIG_FLOOR = 1e-12


def coverage_metrics(matrix: np.ndarray, features: np.ndarray) -> dict:
    """``1 / lambda_min(matrix)`` and ``max_phi phi^T matrix^-1 phi`` over ``features``."""
    features = np.atleast_2d(features)
    if features.size == 0:
        raise ValueError("feature set is empty")
    lmin = float(np.linalg.eigvalsh(matrix)[0])
    inv = np.linalg.inv(matrix)
    quad = np.einsum("md,de,me->m", features, inv, features)
    return {"inv_lambda_min": 1.0 / lmin, "max_bonus_sq": float(quad.max())}


def _orthonormal_span(vectors: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning the rows of ``vectors``."""
    d = vectors.shape[-1]
    if len(vectors) == 0:
        return np.zeros((d, 0))
    u, s, _ = np.linalg.svd(vectors.T, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * max(1.0, float(s[0]))))
    return u[:, :rank]


@dataclass
class Partition:
    """Split of ``(h, s, a)`` into an offline-covered part and an online part.

    ``offline[h, s, a]`` is True for members of the offline part.
    """

    offline: np.ndarray
    basis_off: np.ndarray  # (d, d_off)
    basis_on: np.ndarray  # (d, d_on)

    @property
    def d_off(self) -> int:
        return self.basis_off.shape[1]

    @property
    def d_on(self) -> int:
        return self.basis_on.shape[1]

    @classmethod
    def from_membership(cls, fmap: FeatureMap, offline: np.ndarray) -> Partition:
        offline = np.asarray(offline, dtype=bool)
        if offline.shape[1:] != (fmap.num_states, fmap.num_actions):
            raise ValueError("membership shape does not match the feature map")
        feats = np.broadcast_to(fmap.table, offline.shape + (fmap.dim,))
        return cls(offline, _orthonormal_span(feats[offline]), _orthonormal_span(feats[~offline]))


def partition_from_eigencut(d_off: Dataset, fmap: FeatureMap, k: int) -> Partition:
    """Offline span = top-``k`` eigenvectors of the offline feature covariance.

    A pair belongs to the offline part iff its feature lies in that span, up to
    a residual of ``1e-6``; the online basis spans the remaining features.
    """
    if not 1 <= k <= fmap.dim:
        raise ValueError(f"k must lie in [1, {fmap.dim}], got {k}")
    gram, n = feature_gram(fmap, d_off)
    cov = gram / n
    vals = np.linalg.eigvalsh(cov)
    rank = int(np.sum(vals > RANK_TOL * max(1.0, float(vals[-1]))))
    if k > rank:
        raise ValueError(f"k={k} exceeds the rank {rank} of the offline feature covariance")
    _, U = eig_topk(cov, k)
    resid = fmap.table - (fmap.table @ U) @ U.T
    member = np.linalg.norm(resid, axis=-1) <= MEMBER_TOL
    offline = np.broadcast_to(member, (d_off.horizon,) + member.shape).copy()
    feats = np.broadcast_to(fmap.table, offline.shape + (fmap.dim,))
    return Partition(offline, U, _orthonormal_span(feats[~offline]))


def _projected_eigs(fmap: FeatureMap, basis: np.ndarray, occ: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue per step of ``E_{occ_h}[(U^T phi)(U^T phi)^T]``."""
    psi = fmap.table @ basis  # (S, A, k)
    out = np.empty(len(occ))
    for h, mu in enumerate(occ):
        M = np.einsum("sa,sai,saj->ij", mu, psi, psi)
        out[h] = np.linalg.eigvalsh(0.5 * (M + M.T))[0]
    return out


def partial_concentrability_off(partition: Partition, fmap: FeatureMap, occupancy_mu: np.ndarray):
    """``(c_off, flag)``; ``flag`` is ``"empty"``, ``"singular"`` or ``""``."""
    if partition.d_off == 0:
        return math.inf, "empty"
    lmin = _projected_eigs(fmap, partition.basis_off, occupancy_mu)
    if np.any(lmin <= EIG_FLOOR):
        return math.inf, "singular"
    return float(np.max(1.0 / lmin)), ""


def partial_coverability_on(partition: Partition, fmap: FeatureMap, occ: np.ndarray) -> float:
    """``max_h 1 / lambda_{d_on}`` of the online-projected covariance under ``occ``."""
    lmin = _projected_eigs(fmap, partition.basis_on, occ)
    if np.any(lmin <= EIG_FLOOR):
        return math.inf
    return float(np.max(1.0 / lmin))


def _policy_from_occupancy(occ: np.ndarray) -> np.ndarray:
    mass = occ.sum(axis=2, keepdims=True)
    A = occ.shape[2]
    return np.where(mass > 0, occ / np.where(mass > 0, mass, 1.0), 1.0 / A)


def coverability_check_on(env: TabularMDP, fmap: FeatureMap, partition: Partition, budget: int = 200, ridge: float = 1e-9) -> dict:
    """Searched upper bound on the online coverability coefficient.

    Candidates: the uniform policy, the policy maximizing the expected
    online-projected squared norm, and Frank-Wolfe iterates on the log-det
    design objective over mixtures of occupancy measures (linear oracle by
    exact dynamic programming). Mixture occupancies are realized by the Markov
    policy ``pi_h(a|s) = d_h(s,a) / d_h(s)``, so every candidate value is an
    upper bound on the infimum over policies.
    """
    if not isinstance(env, TabularMDP):
        raise TypeError("coverability search needs a tabular environment")
    d_on = partition.d_on
    if d_on == 0:
        return {"c_on_upper": 0.0, "d_on": 0, "lemma1_holds": True, "flag": "empty", "iterations": 0}
    H, S, A = env.horizon, env.num_states, env.num_actions
    psi = fmap.table @ partition.basis_on  # (S, A, d_on)
    norms = np.broadcast_to(np.sum(psi**2, axis=-1), (H, S, A))

    best = math.inf
    unif = np.full((H, S, A), 1.0 / A)
    best = min(best, partial_coverability_on(partition, fmap, occupancy(env, unif)))
    _, _, acts = value_iteration(env, rewards=norms)
    greedy = np.eye(A)[acts]
    best = min(best, partial_coverability_on(partition, fmap, occupancy(env, greedy)))

    occ = 0.5 * (occupancy(env, unif) + occupancy(env, greedy))
    eye = ridge * np.eye(d_on)
    for it in range(budget):
        grad = np.empty((H, S, A))
        for h in range(H):
            M = np.einsum("sa,sai,saj->ij", occ[h], psi, psi) + eye
            inv = np.linalg.inv(M)
            grad[h] = np.einsum("sai,ij,saj->sa", psi, inv, psi)
        _, _, acts = value_iteration(env, rewards=grad)
        vertex = occupancy(env, np.eye(A)[acts])
        occ = (1 - 2 / (it + 3)) * occ + (2 / (it + 3)) * vertex
        policy = _policy_from_occupancy(occ)
        best = min(best, partial_coverability_on(partition, fmap, occupancy(env, policy)))
    holds = best <= d_on * (1 + 1e-6)
    return {
        "c_on_upper": best,
        "d_on": d_on,
        "lemma1_holds": bool(holds),
        "flag": "" if holds else "inconclusive",
        "iterations": budget,
    }


def write_diagnostics_csv(path, rows) -> None:
    """Rows of ``(metric, h, value, flag)``; ``h`` may be empty for global metrics."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "h", "value", "flag"])
        for metric, h, value, flag in rows:
            writer.writerow([metric, "" if h is None else h, repr(float(value)), flag])
