"""Acceptance criteria 1-8 at desk scale; criterion 9 (full arena) runs only
when CELLEVAC_FULL_SCALE=1. Each test prints one PASS/FAIL line and records it
for the terminal summary."""
import os
import time

import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from conftest import ACCEPTANCE
from cellevac.behavior import PRESETS, beta_p_of_t, choice_probabilities
from cellevac.cgp import EvolutionConfig, evolve_one_plus_lambda
from cellevac.cli import smoke_fitness
from cellevac.controller import ControllerConfig
from cellevac.fundamental_diagrams import ExitDynamics, calibrate_exit, dynamics_for, fit_polynomial_robust
from cellevac.harness import (
    BehaviorConfig, ExperimentSpec, configuration, default_controller_betas, run_many, run_simulation,
    sensitivity_sweep,
)
from cellevac.optimizer import BETA_BOUNDS, TabuConfig, tabu_search
from cellevac.safety import exit_safety
from cellevac.scenario import load_scenario

pytestmark = pytest.mark.slow

# pinned tolerances and limits
SOFTMAX_TOL = 1e-12
LOGIT_EXAMPLE_TOL = 1e-6
SAFETY_TOL = 1e-9
FIT_TOL = 1e-6
PLATEAU_REL = 0.05
CGP_TARGET = 1e-6
CGP_MIN_SOLVED = 9
RUNTIME_S = {1: 1, 2: 1, 3: 300, 4: 1800, 5: 3600, 6: 3600, 7: 600}

N_SEEDS_C5 = 20
N_SEEDS_C6 = 10
COMPLIANCE_LEVELS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def verdict(n, ok, detail, elapsed=None):
    timing = "" if elapsed is None else f" [{elapsed:.1f}s / limit {RUNTIME_S[n]}s]"
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}{timing}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def desk():
    return load_scenario("desk")


@pytest.fixture(scope="module")
def runs_c5(desk):
    dyn = dynamics_for(desk)
    t0 = time.perf_counter()
    seeds = list(range(N_SEEDS_C5))
    cel = run_many(desk, *configuration("CELLEVAC", default_controller_betas("desk")), seeds, dyn)
    std = run_many(desk, *configuration("STANDARD"), seeds, dyn)
    return cel, std, time.perf_counter() - t0


@pytest.fixture(scope="module")
def runs_c6(desk):
    dyn = dynamics_for(desk)
    ctrl = ControllerConfig("mlm", default_controller_betas("desk"))
    t0 = time.perf_counter()
    out = {c: run_many(desk, BehaviorConfig(PRESETS["STANDARD"], c), ctrl, range(N_SEEDS_C6), dyn)
           for c in COMPLIANCE_LEVELS}
    return out, time.perf_counter() - t0


def median(runs, attr):
    return float(np.median([getattr(r, attr) for r in runs]))


def test_criterion_1_safety_exactness():
    t0 = time.perf_counter()
    d = ExitDynamics(1, 2.0, (0.0,) * 7, 2.0, 2.8, 3.5, 2.08)
    locked = exit_safety(np.full(30, d.rho_lock), d)
    safe = exit_safety(np.linspace(0.0, d.rho_sf, 30), d)
    two = exit_safety([d.rho_sf, d.rho_lock], d, 5.0)
    el = time.perf_counter() - t0
    ok = locked == -100.0 and safe == 0.0 and abs(two + 175.0) <= SAFETY_TOL and el < RUNTIME_S[1]
    verdict(1, ok, f"locked {locked}, safe {safe}, two-sample {two!r}", el)
    assert ok


def test_criterion_2_logit_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    sums = shifts = 0.0
    for _ in range(1000):
        v = rng.uniform(-50, 50, rng.integers(1, 9))
        p = choice_probabilities(v)
        sums = max(sums, abs(p.sum() - 1.0))
        shifts = max(shifts, np.max(np.abs(choice_probabilities(v + rng.uniform(-100, 100)) - p)))
    ex = choice_probabilities([1.0, 0.0])
    ex_err = float(np.max(np.abs(ex - [0.731059, 0.268941])))
    n0 = 300
    bp = [beta_p_of_t(8.515, n, n0) for n in range(n0 + 1)]
    linear = np.allclose(np.diff(bp), -8.515 / n0, atol=1e-12)
    ends = bp[0] == 8.515 and bp[-1] == 0.0
    el = time.perf_counter() - t0
    ok = sums <= SOFTMAX_TOL and shifts <= SOFTMAX_TOL and ex_err <= LOGIT_EXAMPLE_TOL and linear and ends \
        and el < RUNTIME_S[2]
    verdict(2, ok, f"max |sum-1| {sums:.1e}, max shift diff {shifts:.1e}, example err {ex_err:.1e}, "
                   f"beta_P endpoints {ends}, linear {linear}", el)
    assert ok


def test_criterion_3_fd_pipeline(desk):
    t0 = time.perf_counter()
    true = np.array([0.0, 1.8, -0.2, 0.05, -0.03, 0.004, -0.0002])
    x = np.linspace(0.0, 4.0, 400)
    coef_err = float(np.max(np.abs(fit_polynomial_robust(x, P.polyval(x, true)).coeffs - true)))
    rng = np.random.default_rng(0)
    xs = np.sort(rng.uniform(0.0, 4.0, 600))
    y = P.polyval(xs, true) + rng.normal(0, 0.05, xs.size)
    bad = rng.choice(xs.size, xs.size // 20, replace=False)
    y[bad] += rng.uniform(2.0, 5.0, bad.size)
    g = np.linspace(0.0, 4.0, 200)
    err = {robust: np.max(np.abs(fit_polynomial_robust(xs, y, robust=robust)(g) - P.polyval(g, true)))
           for robust in (True, False)}
    bundled = {d.exit_id: d for d in dynamics_for(desk)}
    peaks = [8.0] * desk.n_exits
    ordered = []
    for gate, peak in zip(desk.exits, peaks):
        _, _, dyn = calibrate_exit(desk, gate.id, peak, 0)
        ordered.append(dyn.rho_crit < dyn.rho_sf < dyn.rho_over < dyn.rho_lock
                       and bundled[gate.id].rho_crit < bundled[gate.id].rho_sf
                       < bundled[gate.id].rho_over < bundled[gate.id].rho_lock)
    el = time.perf_counter() - t0
    ok = coef_err < FIT_TOL and err[True] < err[False] and all(ordered) and el < RUNTIME_S[3]
    verdict(3, ok, f"coef err {coef_err:.1e}, bisquare {err[True]:.3f} < OLS {err[False]:.3f}, "
                   f"ordering per exit {ordered}", el)
    assert ok


def test_criterion_4_sensitivity_trends(desk):
    t0 = time.perf_counter()
    dyn = dynamics_for(desk)
    seeds = tuple(range(5))
    med = {}
    for param, grid in (("beta_D", (-40.0, -22.0, -10.0, -3.0)), ("beta_P", (0.0, 1.0, 15.0, 29.0))):
        # STANDARD already has beta_P = 0, and beta_D = -28 for the beta_P sweep
        spec = ExperimentSpec(kind="sensitivity", parameter=param, grid=grid, seeds=seeds)
        t = sensitivity_sweep(spec, desk, dyn)
        med[param] = [t.summary_for(v)["decision_mean"]["median"] for v in grid]
    el = time.perf_counter() - t0
    up = bool(np.all(np.diff(med["beta_D"]) > 0))
    down = bool(np.all(np.diff(med["beta_P"]) < 0))
    ok = up and down and el < RUNTIME_S[4]
    fmt = lambda v: "[" + ", ".join(f"{x:.4f}" for x in v) + "]"
    verdict(4, ok, f"beta_D medians {fmt(med['beta_D'])} increasing {up}; "
                   f"beta_P medians {fmt(med['beta_P'])} decreasing {down}", el)
    assert ok


def test_criterion_5_controller_benefit(runs_c5):
    cel, std, el = runs_c5
    te, ts = median(cel, "evac_time"), median(std, "evac_time")
    de, ds = median(cel, "decision_mean"), median(std, "decision_mean")
    ok = te < ts and de < ds and el < RUNTIME_S[5]
    verdict(5, ok, f"evac median CELLEVAC {te:.3f} vs STANDARD {ts:.3f} min ({te < ts}); "
                   f"decision-change median {de:.4f} vs {ds:.4f} ({de < ds})", el)
    assert ok


def test_criterion_6_compliance_plateau(runs_c6):
    out, el = runs_c6
    med = {c: median(r, "evac_time") for c, r in out.items()}
    plateau = abs(med[0.6] - med[1.0]) <= PLATEAU_REL * med[1.0]
    low = med[0.4] < med[0.0]
    ok = plateau and low and el < RUNTIME_S[6]
    verdict(6, ok, "evac medians " + ", ".join(f"{int(c * 100)}%: {m:.3f}" for c, m in med.items())
            + f"; 60% within 5% of 100% {plateau}; 40% < 0% {low}", el)
    assert ok


def test_criterion_7_optimizer_sanity():
    t0 = time.perf_counter()
    within, monotone = [], []
    for seed in range(10):
        c = np.random.default_rng(100 + seed).uniform(BETA_BOUNDS[:, 0], BETA_BOUNDS[:, 1])
        cfg = TabuConfig(iterations=200, seed=seed)
        res = tabu_search(lambda x: float(np.sum((np.asarray(x) - c) ** 2)), cfg)
        within.append(bool(np.all(np.abs(np.array(res.best.x) - c) <= cfg.steps() / 2)))
        monotone.append(bool(np.all(np.diff([r.best_so_far for r in res.trace]) <= 0)))
    solved = 0
    for seed in range(10):
        cfg = EvolutionConfig(generations=5000, lam=4, mutation_rate=0.05, n_nodes=50, seed=seed,
                              target_fitness=CGP_TARGET)
        solved += evolve_one_plus_lambda(smoke_fitness, cfg).best_fitness < CGP_TARGET
    el = time.perf_counter() - t0
    ok = all(within) and all(monotone) and solved >= CGP_MIN_SOLVED and el < RUNTIME_S[7]
    verdict(7, ok, f"Tabu within step/2 {sum(within)}/10, monotone {sum(monotone)}/10; "
                   f"CGP smoke solved {solved}/10", el)
    assert ok


def test_criterion_8_conservation_and_determinism(desk, runs_c5, runs_c6):
    cel, std, _ = runs_c5
    runs = cel + std + [r for rs in runs_c6[0].values() for r in rs]
    balanced = all(r.conservation_ok and r.spawned + r.injected == r.exit_counts.sum() + r.remaining_peds
                   for r in runs)
    same = all(run_simulation(desk, *configuration(name, default_controller_betas("desk")), seed=s).to_json()
               == ref.to_json() for name, ref_runs in (("CELLEVAC", cel), ("STANDARD", std))
               for s, ref in ((0, ref_runs[0]), (7, ref_runs[7])))
    ok = balanced and same
    verdict(8, ok, f"{len(runs)} runs conserve population {balanced}; byte-identical reruns {same}")
    assert ok


@pytest.mark.skipif(os.environ.get("CELLEVAC_FULL_SCALE") != "1", reason="set CELLEVAC_FULL_SCALE=1")
def test_criterion_9_full_scale_smoke():
    arena = load_scenario("madrid_arena")
    dyn = dynamics_for(arena)
    t0 = time.perf_counter()
    cel = run_many(arena, *configuration("CELLEVAC", default_controller_betas("madrid_arena")), range(5), dyn)
    per_run = (time.perf_counter() - t0) / 5
    std = run_many(arena, *configuration("STANDARD"), range(5), dyn)
    te, ts = median(cel, "evac_time"), median(std, "evac_time")
    de, ds = median(cel, "decision_mean"), median(std, "decision_mean")
    ok = te < ts and de < ds and per_run < 1800
    line = (f"CRITERION 9: {'PASS' if ok else 'FAIL'} evac median {te:.3f} vs {ts:.3f} min; decision-change "
            f"median {de:.4f} vs {ds:.4f}; {per_run:.0f}s per CELLEVAC run")
    ACCEPTANCE.append(line)
    print(line)
    assert ok
