"""Seeded multi-trial experiments and CSV emission."""

from __future__ import annotations

import csv
import io
import math
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, format_config
from .dataset import Dataset, deterministic_policy, gen_offline, uniform_policy
from .dynprog import eval_policy_mc
from .envs import TabularMDP, load_env
from .features import FeatureMap, project_features, tabular_to_linear
from .hyrule import HyruleConfig, adversarial_actions, hyrule_run, warm_start
from .optcov import optcov
from .rappel import RappelConfig, offline_grams, rappel
from .tetris import NUM_LEVELS, TOLERANCE, build_mini_tetris

# stream ids for per-trial generators
PROJECTION, ADVERSARY, ADVERSARIAL_DATA, EXPLORE, ONLINE, EVALUATION = range(1, 7)


def stream_seed(trial_seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([trial_seed, stream]).generate_state(1)[0])


def stream_rng(trial_seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([trial_seed, stream])


def trial_seed(master: int, index: int) -> int:
    return master ^ index


def resolve_env(ref: str) -> TabularMDP:
    return build_mini_tetris() if ref == "mini-tetris" else load_env(ref)


def penalty_scale(env: TabularMDP, mean: float, stderr: float = 0.0):
    """Map a return on the learner's ``[0, 1]``-reward scale back to the env's reported scale."""
    if env.name != "mini-tetris":
        return mean, stderr
    span = NUM_LEVELS - 1 - TOLERANCE
    return span * (mean - env.horizon), span * stderr


def hyrule_config(cfg: ExperimentConfig) -> HyruleConfig:
    return HyruleConfig(lam=cfg.lam or 1.0, delta=cfg.delta, c1=cfg.c1, c2=cfg.c2, c3=cfg.c3, c_sigma=cfg.c_sigma)


def rappel_config(cfg: ExperimentConfig) -> RappelConfig:
    return RappelConfig(lam=cfg.lam or None, delta=cfg.delta, c_b=cfg.c_b, c_var=cfg.c_var, c_e=cfg.c_e)


@dataclass
class TrialContext:
    env: TabularMDP
    fmap: FeatureMap
    uniform_data: Dataset
    seed: int


def make_context(cfg: ExperimentConfig, seed: int) -> TrialContext:
    env = resolve_env(cfg.env)
    base = tabular_to_linear(env)
    n_uniform = max(cfg.projection_n_off, cfg.n_off)
    uniform_data = gen_offline(env, uniform_policy(env), n_uniform, stream_seed(seed, PROJECTION))
    if cfg.features == "projected":
        proj = uniform_data.subset(range(cfg.projection_n_off))
        fmap = project_features(base, proj, cfg.k)
    else:
        fmap = base
    return TrialContext(env, fmap, uniform_data, seed)


def adversarial_policy(ctx: TrialContext, cfg: ExperimentConfig) -> np.ndarray:
    """Greedy policy for the negated estimate of a cold-started learner after training."""
    state = warm_start(ctx.env, None, ctx.fmap, hyrule_config(cfg), n_online=cfg.adversary_episodes)
    hyrule_run(ctx.env, state, cfg.adversary_episodes, stream_rng(ctx.seed, ADVERSARY), exact_regret=False)
    return deterministic_policy(adversarial_actions(state), ctx.env.num_actions)


def behavior_data(ctx: TrialContext, cfg: ExperimentConfig, n: int, behavior: str | None = None) -> Dataset:
    behavior = behavior or cfg.behavior
    if behavior == "uniform":
        return ctx.uniform_data.subset(range(n))
    policy = adversarial_policy(ctx, cfg)
    return gen_offline(ctx.env, policy, n, stream_seed(ctx.seed, ADVERSARIAL_DATA))


def _checkpoints(cfg: ExperimentConfig, budget: int) -> list[int]:
    return list(range(cfg.checkpoint_every, budget + 1, cfg.checkpoint_every))


def coverage_curve(ctx: TrialContext, cfg: ExperimentConfig, offline: Dataset | None, budget: int) -> list[tuple]:
    lam = rappel_config(cfg).resolved_lam(ctx.env.horizon)
    grams = offline_grams(ctx.fmap, offline, ctx.env.horizon)
    res = optcov(
        ctx.env, ctx.fmap, grams, cfg.tau, budget, cfg.delta, stream_rng(ctx.seed, EXPLORE),
        lam=lam, c_e=cfg.c_e, offline=offline, checkpoints=_checkpoints(cfg, budget),
    )
    return [(x, pooled) for x, pooled, _ in res.trace]


def policy_value(ctx: TrialContext, cfg: ExperimentConfig, policy: np.ndarray) -> float:
    mean, _ = eval_policy_mc(ctx.env, policy, cfg.mc_rollouts, stream_seed(ctx.seed, EVALUATION))
    return penalty_scale(ctx.env, mean)[0]


def plan_value(ctx: TrialContext, cfg: ExperimentConfig, offline: Dataset | None, budget: int) -> float:
    policy, _, _, _ = rappel(ctx.env, ctx.fmap, offline, budget, cfg.tau, rappel_config(cfg), stream_rng(ctx.seed, EXPLORE))
    return policy_value(ctx, cfg, policy)


def regret_curve(ctx: TrialContext, cfg: ExperimentConfig, offline: Dataset | None) -> np.ndarray:
    state = warm_start(ctx.env, offline, ctx.fmap, hyrule_config(cfg), n_online=cfg.T)
    return hyrule_run(ctx.env, state, cfg.T, stream_rng(ctx.seed, ONLINE)).cumulative_regret


# -- recipes: each returns rows (x, series, value) ---------------------------------


def fig1_trial(cfg: ExperimentConfig, seed: int) -> list[tuple]:
    ctx = make_context(cfg, seed)
    rows = []
    for series in ("uniform", "adversarial", "none"):
        offline = None if series == "none" else behavior_data(ctx, cfg, cfg.n_off, series)
        rows += [(x, series, v) for x, v in coverage_curve(ctx, cfg, offline, cfg.n_on)]
    return rows


def fig2_trial(cfg: ExperimentConfig, seed: int) -> list[tuple]:
    ctx = make_context(cfg, seed)
    total = cfg.n_off + cfg.n_on
    adv = behavior_data(ctx, cfg, total, "adversarial")
    values = {
        "hybrid": plan_value(ctx, cfg, adv.subset(range(cfg.n_off)), cfg.n_on),
        "offline": plan_value(ctx, cfg, adv, 0),
        "online": plan_value(ctx, cfg, None, total),
    }
    return [(total, series, v) for series, v in values.items()]


def fig3_trial(cfg: ExperimentConfig, seed: int) -> list[tuple]:
    ctx = make_context(cfg, seed)
    rows = []
    for series, offline in (("warm", behavior_data(ctx, cfg, cfg.n_off)), ("cold", None)):
        curve = regret_curve(ctx, cfg, offline)
        rows += [(t + 1, series, float(v)) for t, v in enumerate(curve)]
    return rows


def single_trial(cfg: ExperimentConfig, seed: int) -> list[tuple]:
    ctx = make_context(cfg, seed)
    algo = cfg.algorithm
    if algo == "hyrule":
        offline = behavior_data(ctx, cfg, cfg.n_off) if cfg.n_off else None
        return [(t + 1, algo, float(v)) for t, v in enumerate(regret_curve(ctx, cfg, offline))]
    if algo == "optcov_only":
        offline = behavior_data(ctx, cfg, cfg.n_off) if cfg.n_off else None
        return [(x, algo, v) for x, v in coverage_curve(ctx, cfg, offline, cfg.n_on)]
    if algo == "online_only":
        return [(cfg.n_on, algo, plan_value(ctx, cfg, None, cfg.n_on))]
    offline = behavior_data(ctx, cfg, cfg.n_off)
    budget = 0 if algo == "offline_only" else cfg.n_on
    return [(cfg.n_off + budget, algo, plan_value(ctx, cfg, offline, budget))]


RECIPE_FUNCS = {"fig1": fig1_trial, "fig2": fig2_trial, "fig3": fig3_trial, "none": single_trial}


# -- files ------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_rows(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def read_trial_csv(path: Path) -> list[tuple]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(row[0], row[1], float(row[2])) for row in reader]


def aggregate(trial_rows: list[list[tuple]]) -> list[tuple]:
    """``(x, series, mean, stderr, n_trials)`` per point, in first-seen order."""
    order: list[tuple] = []
    values: dict[tuple, list[float]] = {}
    for rows in trial_rows:
        for x, series, v in rows:
            key = (str(x), series)
            if key not in values:
                values[key] = []
                order.append(key)
            values[key].append(float(v))
    out = []
    for key in order:
        vals = np.array(values[key])
        n = len(vals)
        stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out.append((key[0], key[1], float(vals.mean()), stderr, n))
    return out


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, progress=None) -> Path:
    """Run every trial, write per-trial CSVs, the aggregate CSV and a manifest."""
    cfg.validate()
    out_dir = Path(out or cfg.out)
    trial_dir = out_dir / "trials"
    trial_dir.mkdir(parents=True, exist_ok=True)
    func = RECIPE_FUNCS[cfg.recipe]
    ok_rows, failed = [], []
    for i in range(cfg.trials):
        seed = trial_seed(cfg.seed, i)
        path = trial_dir / f"trial_{i:03d}.csv"
        err = trial_dir / f"trial_{i:03d}.error"
        try:
            rows = func(cfg, seed)
        except Exception:  # recorded per trial; the aggregate marks it missing
            err.write_text(traceback.format_exc())
            failed.append(i)
            continue
        if err.exists():
            err.unlink()
        write_rows(path, ["x", "series", "value"], rows)
        ok_rows.append(read_trial_csv(path))
        if progress is not None:
            progress(i, cfg.trials)
    write_rows(out_dir / "aggregate.csv", ["x", "series", "mean", "stderr", "n_trials"], aggregate(ok_rows))
    extra = {"code_version": __version__, "failed_trials": ",".join(map(str, failed)) or "none"}
    (out_dir / "manifest.txt").write_text(format_config(cfg, extra))
    return out_dir

