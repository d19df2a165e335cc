"""Cell-level exit allocation.

Every control period the controller assigns one exit to each hexagonal cell,
either by the argmax of a logit utility evaluated with cell-level attributes
or by the argmax of an evolved CGP scoring rule. The map is then broadcast:
each pedestrian's indicated exit becomes the assignment of the cell it is in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .behavior import BetaConfig, beta_p_of_t, group_ratio, group_sizes, one_hot
from .scenario import DistanceTable, Scenario, locate_cells

MODES = ("off", "mlm", "cgp")


@dataclass(frozen=True)
class ControllerMap:
    assignment: np.ndarray   # (C,) exit ids
    issued_at: float

    def __post_init__(self):
        if np.any(np.asarray(self.assignment) < 1):
            raise ValueError("every cell needs an exit id >= 1")


@dataclass(frozen=True)
class ControllerConfig:
    mode: str = "off"
    betas: BetaConfig | None = None
    genotype: object | None = None
    period: float = 5.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"controller mode must be one of {MODES}, got {self.mode!r}")
        if not self.period > 0:
            raise ValueError("controller period must be > 0")
        if self.mode == "mlm" and self.betas is None:
            raise ValueError("mlm controller needs betas")
        if self.mode == "cgp" and self.genotype is None:
            raise ValueError("cgp controller needs a genotype")

    @property
    def active(self) -> bool:
        return self.mode != "off"


OFF = ControllerConfig()


@dataclass(frozen=True)
class CellAttributes:
    """``(C, E)`` arrays of the cell-level inputs."""

    dist_norm: np.ndarray
    excon_norm: np.ndarray
    group_ratio: np.ndarray
    width_norm: np.ndarray
    personal: np.ndarray


def cell_attributes(counts, densities, scenario: Scenario, table: DistanceTable,
                    critical_density, previous_map: ControllerMap | None) -> CellAttributes:
    c, e = scenario.n_cells, scenario.n_exits
    prev = previous_map.assignment if previous_map is not None else np.zeros(c, dtype=np.int64)
    return CellAttributes(
        dist_norm=table.normalized(),
        excon_norm=np.broadcast_to(np.asarray(densities, float) / np.asarray(critical_density, float), (c, e)),
        group_ratio=group_ratio(group_sizes(counts, table.cell_to_exit)),
        width_norm=np.broadcast_to(scenario.exit_widths / scenario.exit_widths.max(), (c, e)),
        personal=one_hot(prev, e),
    )


def _snapshot(sim_state, scenario, counts, densities):
    from .motion import cell_counts, exit_densities

    if counts is None:
        counts = cell_counts(sim_state, scenario)
    if densities is None:
        densities = exit_densities(sim_state, scenario, counts=counts)
    return counts, densities


def _argmax_map(scores: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest exit id on ties
    return np.argmax(scores, axis=1) + 1


def allocate_mlm(sim_state, scenario: Scenario, distance_table: DistanceTable, exit_dynamics,
                 betas: BetaConfig, previous_map: ControllerMap | None = None,
                 counts=None, densities=None) -> ControllerMap:
    """Deterministic argmax of the controller utility for every cell (no SYSTEM term)."""
    counts, densities = _snapshot(sim_state, scenario, counts, densities)
    crit = [d.rho_crit for d in exit_dynamics]
    a = cell_attributes(counts, densities, scenario, distance_table, crit, previous_map)
    n0 = sim_state.spawned
    bp = beta_p_of_t(betas.beta_P, sim_state.n_active, n0) if n0 > 0 else 0.0
    V = (betas.beta_D * a.dist_norm + betas.beta_W * a.width_norm + betas.beta_G * a.group_ratio
         + betas.beta_E * a.excon_norm + bp * a.personal)
    return ControllerMap(_argmax_map(V), float(sim_state.clock))


def allocate_cgp(sim_state, scenario: Scenario, distance_table: DistanceTable, exit_dynamics,
                 genotype, previous_map: ControllerMap | None = None,
                 counts=None, densities=None) -> ControllerMap:
    """Argmax of the genotype's score over the inputs (D, E, G, W, P) of every (cell, exit)."""
    from .cgp import evaluate

    counts, densities = _snapshot(sim_state, scenario, counts, densities)
    crit = [d.rho_crit for d in exit_dynamics]
    a = cell_attributes(counts, densities, scenario, distance_table, crit, previous_map)
    with np.errstate(all="ignore"):
        scores = evaluate(genotype, [a.dist_norm, a.excon_norm, a.group_ratio, a.width_norm, a.personal])
    scores = np.broadcast_to(np.asarray(scores, dtype=float), a.dist_norm.shape).copy()
    scores[~np.isfinite(scores)] = -np.inf
    assignment = _argmax_map(scores)
    dead = np.all(np.isneginf(scores), axis=1)
    if dead.any():
        if previous_map is not None:
            assignment[dead] = previous_map.assignment[dead]
        else:
            assignment[dead] = np.argmin(distance_table.cell_to_exit[dead], axis=1) + 1
    return ControllerMap(assignment, float(sim_state.clock))


def allocate(config: ControllerConfig, sim_state, scenario, distance_table, exit_dynamics,
             previous_map=None, counts=None, densities=None) -> ControllerMap | None:
    if config.mode == "mlm":
        return allocate_mlm(sim_state, scenario, distance_table, exit_dynamics, config.betas,
                            previous_map, counts, densities)
    if config.mode == "cgp":
        return allocate_cgp(sim_state, scenario, distance_table, exit_dynamics, config.genotype,
                            previous_map, counts, densities)
    return None


def broadcast(cmap: ControllerMap | None, sim_state, scenario: Scenario, rows=None):
    """Set each active pedestrian's indicated exit from its current cell; ``None`` clears them."""
    if rows is None:
        rows = sim_state.active_indices()
    if cmap is None:
        sim_state.system[rows] = 0
        return sim_state
    cells = locate_cells(sim_state.pos[rows], scenario)
    sim_state.system[rows] = cmap.assignment[cells]
    return sim_state
