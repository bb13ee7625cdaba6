"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 finished with the
coverage tolerance unmet.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import ConfigError, ExperimentConfig, load_config
from .diagnostics import (
    coverability_check_on,
    coverage_metrics,
    partial_concentrability_off,
    partition_from_eigencut,
    write_diagnostics_csv,
)
from .dynprog import eval_policy_exact, eval_policy_mc
from .experiments import hyrule_config, rappel_config, resolve_env, run_experiment, write_rows
from .features import load_projection, project_features, save_projection, tabular_to_linear
from .hyrule import hyrule_run, warm_start
from .optcov import feature_set, optcov
from .rappel import format_report, offline_grams, rappel

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_UNMET = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--env", default=None, help="'mini-tetris' or an environment JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybrid-linrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-offline", help="roll out a behavior policy")
    _common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--policy", default="uniform", help="'uniform' or a policy file")

    for name, helptext in (("explore", "run coverage-driven exploration"), ("rappel", "explore then plan pessimistically")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--offline", default=None)
        p.add_argument("--budget", type=int, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--projection", default=None, help="projection matrix file")

    p = sub.add_parser("hyrule", help="warm-started optimistic online learning")
    _common(p)
    p.add_argument("--offline", default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--projection", default=None)

    p = sub.add_parser("eval", help="evaluate a policy file")
    _common(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--n", type=int, default=None)

    p = sub.add_parser("diag", help="coverage and concentrability diagnostics")
    _common(p)
    p.add_argument("--offline", required=True)
    p.add_argument("--k", type=int, default=None, help="offline subspace dimension")
    p.add_argument("--search", type=int, default=50, help="Frank-Wolfe iterations for the online search")
    p.add_argument("--projection", default=None)

    p = sub.add_parser("experiment", help="run a multi-trial experiment recipe")
    _common(p)
    p.add_argument("--trials", type=int, default=None)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.env is not None:
        changes["env"] = args.env
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if args.out is not None and args.command == "experiment":
        changes["out"] = args.out
    return cfg.replace(**changes)


def _require_out(args) -> Path:
    if args.out is None:
        raise UsageError("--out is required")
    return Path(args.out)


def _feature_map(args, cfg, env, offline):
    base = tabular_to_linear(env)
    if cfg.features == "one-hot":
        return base
    if getattr(args, "projection", None):
        return load_projection(base, args.projection)
    source = offline
    if source is None:
        source = ds.gen_offline(env, ds.uniform_policy(env), cfg.projection_n_off, cfg.seed)
    return project_features(base, source, min(cfg.k, base.dim))


def cmd_gen_offline(args, cfg) -> int:
    env = resolve_env(cfg.env)
    out = _require_out(args)
    if args.policy == "uniform":
        policy = ds.uniform_policy(env)
    else:
        policy = ds.deterministic_policy(ds.load_policy(args.policy, env.horizon, env.num_states), env.num_actions)
    ds.save(ds.gen_offline(env, policy, args.n, cfg.seed), out)
    return EXIT_OK


def _load_offline(args, env):
    return ds.load(args.offline, env) if getattr(args, "offline", None) else None


def cmd_explore(args, cfg) -> int:
    env = resolve_env(cfg.env)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    offline = _load_offline(args, env)
    fmap = _feature_map(args, cfg, env, offline)
    tau = cfg.tau if args.tau is None else args.tau
    budget = cfg.n_on if args.budget is None else args.budget
    lam = rappel_config(cfg).resolved_lam(env.horizon)
    grams = offline_grams(fmap, offline, env.horizon)
    res = optcov(env, fmap, grams, tau, budget, cfg.delta, np.random.default_rng(cfg.seed), lam=lam, c_e=cfg.c_e, offline=offline)
    ds.save(res.dataset, out / "exploration.jsonl")
    report = {"episodes_used": res.episodes, "coverage_unmet": res.coverage_unmet}
    for rep in res.reports:
        report[f"epochs_h{rep.h + 1}"] = rep.epochs
        report[f"episodes_h{rep.h + 1}"] = rep.episodes
        report[f"final_f_h{rep.h + 1}"] = rep.final_f
        report[f"max_bonus_h{rep.h + 1}"] = rep.max_bonus
        report[f"success_h{rep.h + 1}"] = rep.success
    (out / "report.txt").write_text(format_report(report))
    if fmap.projection is not None:
        save_projection(fmap, out / "projection.txt")
    return EXIT_UNMET if res.coverage_unmet else EXIT_OK


def cmd_rappel(args, cfg) -> int:
    env = resolve_env(cfg.env)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    offline = _load_offline(args, env)
    fmap = _feature_map(args, cfg, env, offline)
    tau = cfg.tau if args.tau is None else args.tau
    budget = cfg.n_on if args.budget is None else args.budget
    _, combined, plan, report = rappel(env, fmap, offline, budget, tau, rappel_config(cfg), np.random.default_rng(cfg.seed))
    ds.save_policy(plan.actions, out / "policy.txt")
    ds.save(combined, out / "dataset.jsonl")
    (out / "report.txt").write_text(format_report(report))
    return EXIT_UNMET if report["coverage_unmet"] else EXIT_OK


def cmd_hyrule(args, cfg) -> int:
    env = resolve_env(cfg.env)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    offline = _load_offline(args, env)
    fmap = _feature_map(args, cfg, env, offline)
    T = cfg.T if args.T is None else args.T
    state = warm_start(env, offline, fmap, hyrule_config(cfg), n_online=T)
    result = hyrule_run(env, state, T, np.random.default_rng(cfg.seed))
    write_rows(out / "episodes.csv", ["t", "return", "regret", "switches_so_far", "mean_bonus"], result.rows())
    ds.save_policy(result.final_policy(), out / "policy.txt")
    ckpt = out / "checkpoint"
    ckpt.mkdir(exist_ok=True)
    for h, acc in enumerate(state.accs):
        acc.save(ckpt / f"sigma_h{h + 1}.txt")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    env = resolve_env(cfg.env)
    actions = ds.load_policy(args.policy, env.horizon, env.num_states)
    policy = ds.deterministic_policy(actions, env.num_actions)
    n = cfg.mc_rollouts if args.n is None else args.n
    exact = eval_policy_exact(env, policy)[2]
    mean, se = eval_policy_mc(env, policy, n, cfg.seed)
    text = f"exact_value = {exact!r}\nmc_mean = {mean!r}\nmc_stderr = {se!r}\nmc_rollouts = {n}\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_diag(args, cfg) -> int:
    env = resolve_env(cfg.env)
    out = _require_out(args)
    offline = _load_offline(args, env)
    fmap = _feature_map(args, cfg, env, offline)
    k = min(cfg.k if args.k is None else args.k, fmap.dim)
    rows = []
    lam = rappel_config(cfg).resolved_lam(env.horizon)
    grams = offline_grams(fmap, offline, env.horizon)
    for h in range(env.horizon):
        feats = feature_set(env, fmap, h)
        if len(feats):
            m = coverage_metrics(grams[h] + lam * np.eye(fmap.dim), feats)
            rows.append(("inv_lambda_min", h + 1, m["inv_lambda_min"], ""))
            rows.append(("max_bonus_sq", h + 1, m["max_bonus_sq"], ""))
    part = partition_from_eigencut(offline, fmap, k)
    states, actions, _ = offline.arrays()
    occ = np.zeros((env.horizon, env.num_states, env.num_actions))
    for h in range(env.horizon):
        np.add.at(occ[h], (states[:, h], actions[:, h]), 1.0 / len(offline))
    c_off, flag = partial_concentrability_off(part, fmap, occ)
    rows.append(("c_off", None, c_off, flag))
    rows.append(("d_off", None, part.d_off, ""))
    rows.append(("d_on", None, part.d_on, ""))
    check = coverability_check_on(env, fmap, part, budget=args.search)
    rows.append(("c_on_upper", None, check["c_on_upper"], check["flag"]))
    write_diagnostics_csv(out, rows)
    return EXIT_OK


def cmd_experiment(args, cfg) -> int:
    run_experiment(cfg)
    return EXIT_OK


COMMANDS = {
    "gen-offline": cmd_gen_offline,
    "explore": cmd_explore,
    "rappel": cmd_rappel,
    "hyrule": cmd_hyrule,
    "eval": cmd_eval,
    "diag": cmd_diag,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
    except (ConfigError, OSError) as exc:
        print(f"hybrid-linrl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"hybrid-linrl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # reported, not raised, so scripts see exit code 2
        print(f"hybrid-linrl: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
