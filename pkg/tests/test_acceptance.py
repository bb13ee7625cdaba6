"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from hybrid_linrl.config import ExperimentConfig
from hybrid_linrl.dataset import gen_offline, uniform_policy
from hybrid_linrl.diagnostics import coverability_check_on, partition_from_eigencut
from hybrid_linrl.dynprog import value_iteration
from hybrid_linrl.envs import bandit_mdp, random_tabular_mdp
from hybrid_linrl.experiments import read_trial_csv, run_experiment
from hybrid_linrl.features import feature_gram, tabular_to_linear
from hybrid_linrl.hyrule import HyruleConfig, hyrule_run, warm_start
from hybrid_linrl.linalg import CovarianceAccumulator, ridge_solve
from hybrid_linrl.optcov import feature_set, max_bonus_sq, optcov
from hybrid_linrl.rappel import offline_grams

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str, elapsed: float, budget: float | None = None):
        within = "" if budget is None else f" budget={budget:.0f}s"
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail} (runtime={elapsed:.1f}s{within})")

    return emit


def test_criterion_1_linalg_oracle(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_inv = worst_logdet = worst_ridge = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 13))
        lam = float(rng.uniform(0.1, 2.0))
        acc = CovarianceAccumulator(d, lam)
        X = rng.normal(size=(int(rng.integers(1, 30)), d))
        w = rng.uniform(0.2, 3.0, size=len(X))
        y = rng.normal(size=len(X))
        for x, wi, yi in zip(X, w, y):
            acc.update(x, wi, yi)
        dense = lam * np.eye(d) + (X * w[:, None]).T @ X
        worst_inv = max(worst_inv, float(np.max(np.abs(acc.inverse - np.linalg.inv(dense)))))
        worst_logdet = max(worst_logdet, abs(acc.log_det - np.linalg.slogdet(dense)[1]))
        normal_eq = np.linalg.solve(dense, X.T @ (w * y))
        worst_ridge = max(worst_ridge, float(np.max(np.abs(ridge_solve(acc) - normal_eq))))
    elapsed = time.perf_counter() - start
    ok = worst_inv <= 1e-7 and worst_logdet <= 1e-7 and worst_ridge <= 1e-8 and elapsed < 10
    report(1, ok, f"max inverse err={worst_inv:.2e}, log-det err={worst_logdet:.2e}, ridge err={worst_ridge:.2e}", elapsed, 10)
    assert ok


def test_criterion_2_monotone_q(report):
    start = time.perf_counter()
    violations = switches = checks = 0
    for i in range(20):
        rng = np.random.default_rng([7, i])
        S, A, H = int(rng.integers(2, 7)), int(rng.integers(2, 4)), int(rng.integers(2, 6))
        env = random_tabular_mdp(S, A, H, seed=100 + i)
        n_off = int(rng.integers(0, 30))
        data = gen_offline(env, uniform_policy(env), n_off, seed=i) if n_off else None
        state = warm_start(env, data, tabular_to_linear(env), HyruleConfig.practical(), n_online=300)
        prev = {"Q": state.Q.copy(), "Qc": state.Qc.copy(), "switches": state.switches}

        def check(st, t):
            nonlocal violations, switches, checks
            if st.switches == prev["switches"]:
                return
            switches += st.switches - prev["switches"]
            checks += 1
            violations += int(np.sum(st.Q > prev["Q"] + 1e-12)) + int(np.sum(st.Qc < prev["Qc"] - 1e-12))
            prev.update(Q=st.Q.copy(), Qc=st.Qc.copy(), switches=st.switches)

        hyrule_run(env, state, 300, rng, exact_regret=False, on_episode=check)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 60
    report(2, ok, f"{violations} violations over {checks} switch checks ({switches} switches, 20 MDPs, T=300)", elapsed, 60)
    assert ok


def test_criterion_3_sandwich(report):
    start = time.perf_counter()
    good = 0
    for seed in range(100):
        env = random_tabular_mdp(3, 2, 3, seed=seed)
        q_star = value_iteration(env)[0]
        state = warm_start(env, None, tabular_to_linear(env), HyruleConfig.theory(delta=0.05), n_online=100)
        held = [bool(np.all(state.Qc <= q_star + 1e-9) and np.all(q_star <= state.Q + 1e-9))]

        def check(st, t):
            held.append(bool(np.all(st.Qc <= q_star + 1e-9) and np.all(q_star <= st.Q + 1e-9)))

        hyrule_run(env, state, 100, np.random.default_rng(seed), exact_regret=False, on_episode=check)
        good += all(held)
    elapsed = time.perf_counter() - start
    ok = good >= 95 and elapsed < 300
    report(3, ok, f"sandwich held at every (t,h,s,a) in {good}/100 runs", elapsed, 300)
    assert ok


def test_criterion_4_optcov_soundness(report):
    start = time.perf_counter()
    successes = violations = evaluations = sandwich_failures = 0
    for i in range(50):
        rng = np.random.default_rng([11, i])
        S, A, H = int(rng.integers(2, 6)), int(rng.integers(2, 4)), int(rng.integers(1, 4))
        env = random_tabular_mdp(S, A, H, seed=500 + i)
        fmap = tabular_to_linear(env)
        n_off = int(rng.integers(0, 20))
        data = gen_offline(env, uniform_policy(env), n_off, seed=i) if n_off else None
        grams = offline_grams(fmap, data, H)
        tau = float(rng.uniform(0.2, 1.0))
        lam = 1.0 / H**2
        res = optcov(env, fmap, grams, tau, int(rng.integers(20, 400)), 0.05, rng, lam=lam, offline=data)
        for f, hard, eta, m in res.checks:
            evaluations += 1
            if not hard - 1e-9 <= f <= hard + math.log(m) / eta + 1e-9:
                sandwich_failures += 1
        if res.coverage_unmet:
            continue
        successes += 1
        for h in range(H):
            measured = max_bonus_sq(feature_set(env, fmap, h), res.online_gram[h] + grams[h] + lam * np.eye(fmap.dim))
            violations += measured > tau * (1 + 1e-6)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and sandwich_failures == 0
    report(4, ok, f"{violations} violations over {successes} successful runs; {sandwich_failures}/{evaluations} sandwich failures", elapsed)
    assert ok


def test_criterion_5_online_coverability_bound(report):
    start = time.perf_counter()
    holds, inconclusive = 0, []
    for i in range(100):
        rng = np.random.default_rng([13, i])
        S, A, H = int(rng.integers(2, 5)), int(rng.integers(2, 4)), int(rng.integers(1, 4))
        env = random_tabular_mdp(S, A, H, seed=900 + i)
        fmap = tabular_to_linear(env)
        data = gen_offline(env, uniform_policy(env), int(rng.integers(2, 10)), seed=i)
        gram, n = feature_gram(fmap, data)
        rank = int(np.linalg.matrix_rank(gram / n))
        part = partition_from_eigencut(data, fmap, int(rng.integers(1, rank + 1)))
        out = coverability_check_on(env, fmap, part, budget=50)
        if out["lemma1_holds"]:
            holds += 1
        else:
            inconclusive.append(out["c_on_upper"] / out["d_on"])
    elapsed = time.perf_counter() - start
    ok = holds == 100 and elapsed < 300
    ratio = f"; median c_on/d_on among failures={np.median(inconclusive):.2f}" if inconclusive else ""
    report(5, ok, f"searched c_on <= d_on in {holds}/100 instances{ratio}", elapsed, 300)
    assert ok


# -- figure recipes at full size, run once per module ---------------------------------


def _curves(out):
    rows = {}
    for line in (out / "aggregate.csv").read_text().splitlines()[1:]:
        x, series, mean, _, _ = line.split(",")
        rows.setdefault(series, {})[int(x)] = float(mean)
    return rows


@pytest.fixture(scope="module")
def figures(tmp_path_factory):
    cache = {}

    def run(recipe: str, trials: int, **kw):
        key = (recipe, trials)
        if key not in cache:
            cfg = ExperimentConfig(recipe=recipe, trials=trials, seed=0, **kw)
            start = time.perf_counter()
            out = run_experiment(cfg, tmp_path_factory.mktemp(recipe))
            cache[key] = (out, time.perf_counter() - start)
        return cache[key]

    return run


def test_criterion_6_figure1(report, figures):
    out, elapsed = figures("fig1", 30)
    c = _curves(out)
    xs = sorted(c["none"])
    at_or_below = sum(c["uniform"][x] <= c["none"][x] for x in xs) / len(xs)
    strictly_below = sum(c["adversarial"][x] < c["none"][x] for x in xs) / len(xs)
    ok = at_or_below >= 0.9 and strictly_below >= 0.6 and elapsed <= 1800
    report(6, ok, f"uniform <= none at {at_or_below:.0%} of checkpoints; adversarial < none at {strictly_below:.0%}", elapsed, 1800)
    assert ok


def test_criterion_7_figure2(report, figures):
    out, elapsed = figures("fig2", 30)
    c = {s: v[300] for s, v in _curves(out).items()}
    ok = c["hybrid"] >= c["offline"] and c["hybrid"] >= c["online"] and elapsed <= 1800
    report(7, ok, f"mean value hybrid={c['hybrid']:.4f}, offline={c['offline']:.4f}, online={c['online']:.4f}", elapsed, 1800)
    assert ok


def test_criterion_8_figure3(report, figures):
    out, elapsed = figures("fig3", 10)
    c = _curves(out)
    ok = c["warm"][500] <= c["cold"][500] and elapsed <= 1800
    report(8, ok, f"mean cumulative regret at T=500 warm={c['warm'][500]:.2f}, cold={c['cold'][500]:.2f}", elapsed, 1800)
    assert ok


def test_criterion_9_bandit(report):
    start = time.perf_counter()
    r1000, r2000, optimal = [], [], 0
    env = bandit_mdp([0.25, 0.75])
    for seed in range(20):
        state = warm_start(env, None, tabular_to_linear(env), HyruleConfig.practical(), n_online=2000)
        res = hyrule_run(env, state, 2000, np.random.default_rng(seed))
        r1000.append(res.cumulative_regret[999])
        r2000.append(res.cumulative_regret[1999])
        optimal += int(res.final_policy()[0, 0] == 1)
    elapsed = time.perf_counter() - start
    a, b = float(np.mean(r1000)), float(np.mean(r2000))
    ok = b < 0.9 * 2 * a and optimal >= 19 and elapsed < 120
    report(9, ok, f"mean regret(1000)={a:.2f}, regret(2000)={b:.2f}; greedy arm optimal in {optimal}/20", elapsed, 120)
    assert ok


def test_criterion_10_determinism(report, figures, tmp_path):
    start = time.perf_counter()
    mismatched = []
    for recipe, trials in (("fig1", 30), ("fig2", 30), ("fig3", 10)):
        first, _ = figures(recipe, trials)
        repeat = run_experiment(ExperimentConfig(recipe=recipe, trials=2, seed=0), tmp_path / recipe)
        for i in range(2):
            name = f"trials/trial_{i:03d}.csv"
            if (first / name).read_bytes() != (repeat / name).read_bytes():
                mismatched.append(f"{recipe}/{name}")
    fig3_again = run_experiment(ExperimentConfig(recipe="fig3", trials=10, seed=0), tmp_path / "fig3_full")
    if (fig3_again / "aggregate.csv").read_bytes() != (figures("fig3", 10)[0] / "aggregate.csv").read_bytes():
        mismatched.append("fig3/aggregate.csv")
    assert read_trial_csv(fig3_again / "trials/trial_000.csv")
    elapsed = time.perf_counter() - start
    ok = not mismatched
    report(10, ok, "repeated runs byte-identical" if ok else f"mismatched: {', '.join(mismatched)}", elapsed)
    assert ok
