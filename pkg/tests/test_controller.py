import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from conftest import box_scenario
from cellevac import cgp
from cellevac.behavior import PRESETS, BetaConfig
from cellevac.controller import (
    ControllerConfig, ControllerMap, allocate, allocate_cgp, allocate_mlm, broadcast, cell_attributes,
)
from cellevac.fundamental_diagrams import dynamics_for
from cellevac.harness import reference_rule_path
from cellevac.motion import SimState, cell_counts, exit_densities, sfm_step
from cellevac.scenario import build_distance_table, locate_cells, spawn_population


@pytest.fixture(scope="module")
def snap(desk):
    state = SimState.from_population(spawn_population(desk, 0), desk)
    state.target[:] = 1 + np.arange(state.n_rows) % 4
    for _ in range(300):
        sfm_step(state, desk)
    table = build_distance_table(desk)
    dyn = dynamics_for(desk)
    return state, table, dyn


def nearest_map(table):
    return np.argmin(table.cell_to_exit, axis=1) + 1


def test_distance_only_betas_give_nearest_exit(desk, snap):
    state, table, dyn = snap
    m = allocate_mlm(state, desk, table, dyn, BetaConfig(beta_D=-1.0))
    assert np.array_equal(m.assignment, nearest_map(table))
    assert m.issued_at == state.clock


def test_equidistant_tie_goes_to_lower_id():
    s = box_scenario(width=12.0, height=6.0, cell_width=6.0,
                     gates=[(((0, 2), (0, 4)), None), (((12, 2), (12, 4)), None)])
    state = SimState.from_population([], s)
    table = build_distance_table(s)
    m = allocate_mlm(state, s, table, dynamics_stub(s), BetaConfig(beta_D=-1.0))
    mid = np.flatnonzero(np.isclose(table.cell_to_exit[:, 0], table.cell_to_exit[:, 1]))
    assert len(mid) > 0 and np.all(m.assignment[mid] == 1)


class _Dyn:
    rho_crit = 2.0


def dynamics_stub(s):
    return [_Dyn() for _ in range(s.n_exits)]


def test_congestion_break_even_matches_scalar_solve(desk, snap):
    state, table, dyn = snap
    betas = PRESETS["CELLEVAC"]
    counts = np.zeros(desk.n_cells)
    crit = np.array([d.rho_crit for d in dyn])
    fresh = SimState.from_population([], desk)    # n_active = spawned = 0: no personal weight
    near = nearest_map(table)
    cell = int(np.argmin(table.cell_to_exit[:, 1]))     # the cell closest to exit 2
    assert near[cell] == 2
    a = cell_attributes(counts, np.zeros(4), desk, table, crit, None)

    def gap(x):
        # utility of exit 2 minus the best alternative, with exit 2 at density x
        v = (betas.beta_D * a.dist_norm[cell] + betas.beta_W * a.width_norm[cell]
             + betas.beta_G * a.group_ratio[cell])
        return v[1] + betas.beta_E * x / crit[1] - np.max(np.delete(v, 1))

    oracle = brentq(gap, 0.0, 1e3, xtol=1e-12)

    def assigned(x):
        d = np.zeros(4)
        d[1] = x
        return allocate_mlm(fresh, desk, table, dyn, betas, counts=counts, densities=d).assignment[cell]

    lo, hi = 0.0, 1e3
    assert assigned(lo) == 2 and assigned(hi) != 2
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if assigned(mid) == 2 else (lo, mid)
    assert lo == pytest.approx(oracle, abs=1e-8)


def test_cgp_minus_distance_gives_nearest(desk, snap):
    state, table, dyn = snap
    g = cgp.from_sexpr("(- G (+ G D))")
    zeros = np.zeros(desk.n_cells)
    m = allocate_cgp(state, desk, table, dyn, g, counts=zeros, densities=np.zeros(4))
    assert np.array_equal(m.assignment, nearest_map(table))


def test_cgp_constant_score_gives_exit_one(desk, snap):
    state, table, dyn = snap
    m = allocate_cgp(state, desk, table, dyn, cgp.from_sexpr("(- D D)"))
    assert np.all(m.assignment == 1)


def sexpr_eval(text, env):
    """Independent prefix-expression interpreter with protected division."""
    toks = text.replace("(", " ( ").replace(")", " ) ").split()

    def rec(i):
        if toks[i] == "(":
            op = toks[i + 1]
            a, i = rec(i + 2)
            b, i = rec(i)
            assert toks[i] == ")"
            if op == "+":
                r = a + b
            elif op == "-":
                r = a - b
            elif op == "*":
                r = a * b
            else:
                r = np.where(np.abs(b) < 1e-9, 1.0, a / np.where(np.abs(b) < 1e-9, 1.0, b))
            return r, i + 1
        return env[toks[i]], i + 1

    val, end = rec(0)
    assert end == len(toks)
    return val


def test_reference_rule_matches_interpreter_oracle(desk, snap):
    state, table, dyn = snap
    g = cgp.load(reference_rule_path())
    prev = ControllerMap(nearest_map(table), 0.0)
    m = allocate_cgp(state, desk, table, dyn, g, previous_map=prev)
    counts = cell_counts(state, desk)
    dens = exit_densities(state, desk, counts=counts)
    a = cell_attributes(counts, dens, desk, table, [d.rho_crit for d in dyn], prev)
    env = {"D": a.dist_norm, "E": a.excon_norm, "G": a.group_ratio, "W": a.width_norm, "P": a.personal}
    with np.errstate(all="ignore"):
        score = np.broadcast_to(sexpr_eval(cgp.to_sexpr(g), env), a.dist_norm.shape).copy()
    score[~np.isfinite(score)] = -np.inf
    assert np.array_equal(m.assignment, np.argmax(score, axis=1) + 1)


def test_non_finite_scores_keep_previous(desk, snap, monkeypatch):
    state, table, dyn = snap
    prev = ControllerMap(np.full(desk.n_cells, 3), 0.0)

    def nan_rows(g, inputs, phenotype=None):
        s = -np.asarray(inputs[0], dtype=float).copy()
        s[:5] = np.nan
        s[5, 0] = np.inf * 0
        return s

    monkeypatch.setattr(cgp, "evaluate", nan_rows)
    m = allocate_cgp(state, desk, table, dyn, cgp.from_sexpr("(+ D D)"), previous_map=prev)
    assert np.all(m.assignment[:5] == 3)
    nearest_without_1 = np.argmin(table.cell_to_exit[5, 1:]) + 2
    assert m.assignment[5] == nearest_without_1
    assert np.array_equal(m.assignment[6:], nearest_map(table)[6:])


def test_allocation_is_deterministic(desk, snap):
    state, table, dyn = snap
    for cfg in (ControllerConfig("mlm", PRESETS["CELLEVAC"]),
                ControllerConfig("cgp", genotype=cgp.load(reference_rule_path()))):
        a = allocate(cfg, state, desk, table, dyn)
        b = allocate(cfg, state, desk, table, dyn)
        assert np.array_equal(a.assignment, b.assignment)
    assert allocate(ControllerConfig(), state, desk, table, dyn) is None


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0))
def test_positive_scaling_leaves_map_unchanged(c):
    from cellevac.scenario import load_scenario
    desk = load_scenario("desk")
    state = SimState.from_population(spawn_population(desk, 0), desk)
    table = build_distance_table(desk)
    dyn = dynamics_for(desk)
    state.active[::3] = False
    prev = ControllerMap(1 + np.arange(desk.n_cells) % 4, 0.0)
    b = PRESETS["CELLEVAC"]
    scaled = BetaConfig.from_array(b.as_array() * c)
    m1 = allocate_mlm(state, desk, table, dyn, b, prev)
    m2 = allocate_mlm(state, desk, table, dyn, scaled, prev)
    assert np.array_equal(m1.assignment, m2.assignment)


def test_hysteresis_with_positive_beta_p(desk, snap):
    state, table, dyn = snap
    assert state.n_active < state.spawned
    b = PRESETS["CELLEVAC"]
    first = allocate_mlm(state, desk, table, dyn, b)
    second = allocate_mlm(state, desk, table, dyn, b, first)
    third = allocate_mlm(state, desk, table, dyn, b, second)
    assert np.array_equal(first.assignment, second.assignment)
    assert np.array_equal(second.assignment, third.assignment)


def test_broadcast_semantics(desk, snap):
    state, _, _ = snap
    st_ = SimState.from_population(spawn_population(desk, 1), desk)
    broadcast(None, st_, desk)
    assert np.all(st_.system == 0)
    m = ControllerMap(np.full(desk.n_cells, 3), 0.0)
    broadcast(m, st_, desk)
    assert np.all(st_.system[st_.active] == 3)
    varied = ControllerMap(1 + np.arange(desk.n_cells) % 4, 0.0)
    broadcast(varied, st_, desk)
    cells = locate_cells(st_.pos, desk)
    assert np.array_equal(st_.system, varied.assignment[cells])
    # moving a pedestrian to another cell does not change its indication until the next broadcast
    before = st_.system.copy()
    st_.pos[0] = desk.cell_centers[(cells[0] + 1) % desk.n_cells].clip(0.5, 10.0)
    assert np.array_equal(st_.system, before)


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig("mlm")
    with pytest.raises(ValueError):
        ControllerConfig("cgp")
    with pytest.raises(ValueError):
        ControllerConfig("bogus")
    with pytest.raises(ValueError):
        ControllerConfig("mlm", PRESETS["CELLEVAC"], period=0)
    with pytest.raises(ValueError):
        ControllerMap(np.array([1, 0]), 0.0)
