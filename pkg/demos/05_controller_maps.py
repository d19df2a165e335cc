"""What the controller tells each cell.

Every 5 s the controller reads per-cell head counts and gate densities and
assigns one gate to each cell. With only a distance weight it reproduces the
nearest-gate map; the tuned weights also steer cells away from crowded gates.
A CGP rule does the same job with an evolved formula.
"""
import numpy as np

from cellevac import cgp
from cellevac.behavior import PRESETS, BetaConfig, decision_cycle
from cellevac.controller import ControllerConfig, allocate
from cellevac.fundamental_diagrams import dynamics_for
from cellevac.harness import default_controller_betas, reference_rule_path
from cellevac.motion import SimState, block_exit, sfm_step
from cellevac.scenario import build_distance_table, load_scenario, spawn_population

desk = load_scenario("desk")
dyn = dynamics_for(desk)
table = build_distance_table(desk)
state = SimState.from_population(spawn_population(desk, 0), desk)
block_exit(state, 2)
crit = [d.rho_crit for d in dyn]
rng = np.random.default_rng(0)
for k in range(300):   # 15 s of individual choices, nobody guided yet
    if k % 100 == 0:
        decision_cycle(state, desk, table, crit, PRESETS["STANDARD"], rng)
    sfm_step(state, desk, 0.05)
print(f"after 15 s: {state.n_active} inside, gate 2 blocked")

rule = cgp.load(reference_rule_path())
configs = {
    "nearest": ControllerConfig("mlm", BetaConfig(beta_D=-1.0)),
    "tuned": ControllerConfig("mlm", default_controller_betas("desk")),
    "cgp": ControllerConfig("cgp", genotype=rule),
}
print("CGP rule:", cgp.to_sexpr(rule))
for name, cfg in configs.items():
    cmap = allocate(cfg, state, desk, table, dyn)
    share = np.bincount(cmap.assignment, minlength=desk.n_exits + 1)[1:]
    print(f"{name:8s} cells per gate {share.tolist()}  map {''.join(map(str, cmap.assignment))}")
