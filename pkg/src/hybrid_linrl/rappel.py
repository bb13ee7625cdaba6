"""Exploration followed by variance-weighted pessimistic planning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, empty_dataset, split
from .envs import TabularMDP
from .features import FeatureMap
from .optcov import OptcovResult, feature_set, max_bonus_sq, optcov
from .planning import Plan, estimate_variance, first_pass_values, linpevi_advplus, pessimism_radius


@dataclass
class RappelConfig:
    lam: float | None = None  # None -> 1 / H^2
    delta: float = 0.05
    c_b: float = 1.0
    c_var: float = 0.01
    c_e: float = 0.1
    split_fraction: float = 0.5
    split_seed: int = 0

    @classmethod
    def practical(cls, **kw) -> RappelConfig:
        base = dict(c_b=0.02)
        base.update(kw)
        return cls(**base)

    def resolved_lam(self, H: int) -> float:
        return 1.0 / H**2 if self.lam is None else self.lam


def offline_grams(fmap: FeatureMap, dataset: Dataset | None, H: int) -> np.ndarray:
    """Per-step raw covariates ``sum phi phi^T`` of ``dataset``, shape ``(H, d, d)``."""
    out = np.zeros((H, fmap.dim, fmap.dim))
    if dataset is None or len(dataset) == 0:
        return out
    states, actions, _ = dataset.arrays()
    X = fmap.table[states, actions]  # (N, H, d)
    return np.einsum("nhi,nhj->hij", X, X)


def plan_offline(dataset: Dataset, fmap: FeatureMap, config: RappelConfig, H: int) -> tuple[Plan, dict]:
    lam = config.resolved_lam(H)
    N = len(dataset)
    beta2 = pessimism_radius(config.c_b, fmap.dim, H, N, config.delta)
    d_main, d_prime = split(dataset, config.split_fraction, config.split_seed)
    v_prime = first_pass_values(d_prime, fmap, lam, beta2)
    variance = estimate_variance(d_prime, v_prime, fmap, lam, config.c_var, n_total=N)
    plan = linpevi_advplus(d_main, variance, fmap, lam, beta2)
    info = {"beta2": beta2, "lambda": lam, "n_plan": len(d_main), "n_variance": len(d_prime)}
    return plan, info


def rappel(env: TabularMDP, fmap: FeatureMap, d_off: Dataset | None, n_on_budget: int, tau: float, config: RappelConfig, rng: np.random.Generator):
    """Returns ``(policy (H, S, A), combined dataset, plan, report dict)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if n_on_budget < 0:
        raise ValueError("budget must be nonnegative")
    H = env.horizon
    if d_off is not None and d_off.env_fingerprint != env.fingerprint:
        raise ValueError("offline dataset was generated on a different environment")
    lam = config.resolved_lam(H)
    grams = offline_grams(fmap, d_off, H)
    explored: OptcovResult | None = None
    combined = d_off if d_off is not None else empty_dataset(env, fmap.ref)
    if n_on_budget > 0:
        explored = optcov(env, fmap, grams, tau, n_on_budget, config.delta, rng, lam=lam, c_e=config.c_e, offline=d_off)
        combined = combined.merged(explored.dataset)
    if len(combined) < 2:
        raise ValueError("planning needs at least two trajectories")
    plan, info = plan_offline(combined, fmap, config, H)
    report = {
        "episodes_used": 0 if explored is None else explored.episodes,
        "n_off": 0 if d_off is None else len(d_off),
        "coverage_unmet": False,
        **info,
        "v_hat_1": float(env.initial @ plan.V[0]),
    }
    if explored is not None:
        report["coverage_unmet"] = explored.coverage_unmet
        for rep in explored.reports:
            report[f"max_bonus_h{rep.h + 1}"] = rep.max_bonus
            report[f"episodes_h{rep.h + 1}"] = rep.episodes
            report[f"epochs_h{rep.h + 1}"] = rep.epochs
            report[f"success_h{rep.h + 1}"] = rep.success
    else:
        # no exploration: report the offline coverage directly
        eye = lam * np.eye(fmap.dim)
        met = True
        for h in range(H):
            mb = max_bonus_sq(feature_set(env, fmap, h), grams[h] + eye)
            report[f"max_bonus_h{h + 1}"] = mb
            met = met and mb <= tau
        report["coverage_unmet"] = not met
    return plan.policy(), combined, plan, report


def format_report(report: dict) -> str:
    lines = []
    for key, value in report.items():
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
