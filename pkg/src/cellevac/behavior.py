"""Multinomial-logit exit choice.

Each exit gets a systematic utility from six normalized attributes
(distance, width, group size, congestion at the exit, previous choice and the
controller's indication). Choice probabilities are the softmax of the
utilities and a choice is drawn by inverse-CDF sampling. The weight on the
previous choice grows as the facility empties, so decisions harden over time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .scenario import DistanceTable, Scenario, locate_cells, pedestrian_exit_distances

DECISION_PERIOD = 5.0


@dataclass(frozen=True)
class BetaConfig:
    beta_D: float = 0.0
    beta_G: float = 0.0
    beta_E: float = 0.0
    beta_W: float = 0.0
    beta_P: float = 0.0
    beta_SYS: float = 0.0

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"betas must be finite, got {vals.tolist()}")
        if self.beta_P < 0:
            raise ValueError(f"beta_P must be >= 0, got {self.beta_P}")

    def as_array(self) -> np.ndarray:
        """Coefficients in (D, G, E, W, P, SYS) order."""
        return np.array([self.beta_D, self.beta_G, self.beta_E, self.beta_W, self.beta_P, self.beta_SYS], dtype=float)

    @classmethod
    def from_array(cls, values) -> "BetaConfig":
        vals = [float(v) for v in values]
        if len(vals) == 5:
            vals.append(0.0)
        if len(vals) != 6:
            raise ValueError("expected 5 or 6 coefficients in (D, G, E, W, P[, SYS]) order")
        return cls(*vals)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "BetaConfig":
        return cls(**{k: float(v) for k, v in raw.items() if k in cls.__dataclass_fields__})

    def replace(self, **changes) -> "BetaConfig":
        d = self.to_dict()
        d.update(changes)
        return BetaConfig(**d)


PRESETS: dict[str, BetaConfig] = {
    "STANDARD": BetaConfig(-28.0, 0.6, -0.5, 0.6, 0.0, 0.0),
    "OPTIMAL": BetaConfig(-28.863, 9.909, -2.801, 0.0, 8.515, 0.0),
    "CELLEVAC": BetaConfig(-17.723, -2.181, -1.671, 1.064, 2.594, 0.0),
    "COMPLIANT": BetaConfig(0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
}


def preset(name: str) -> BetaConfig:
    try:
        return PRESETS[name.upper()]
    except KeyError:
        raise KeyError(f"unknown beta preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class AttributeVector:
    """Per-exit attributes for one decision maker (arrays of length E)."""

    dist_norm: np.ndarray
    width_norm: np.ndarray
    group_ratio: np.ndarray
    excon_norm: np.ndarray
    personal: np.ndarray
    system: np.ndarray

    @property
    def n_exits(self) -> int:
        return len(self.dist_norm)


@dataclass(frozen=True)
class ChoiceOutcome:
    chosen: int
    changed: bool
    probabilities: np.ndarray


# ---------------------------------------------------------------------------
# attributes
# ---------------------------------------------------------------------------

def group_sizes(counts: np.ndarray, cell_to_exit: np.ndarray) -> np.ndarray:
    """``(C, E)`` group size: occupancy of the cell plus all cells strictly closer to the exit."""
    counts = np.asarray(counts, dtype=float)
    n_cells, n_exits = cell_to_exit.shape
    out = np.empty((n_cells, n_exits))
    for j in range(n_exits):
        d = cell_to_exit[:, j]
        order = np.argsort(d, kind="stable")
        sd = d[order]
        cum = np.concatenate([[0.0], np.cumsum(counts[order])])
        closer = cum[np.searchsorted(sd, d, side="left")]
        out[:, j] = closer + counts
    return out


def group_ratio(groups: np.ndarray) -> np.ndarray:
    """``(G - G_min) / G`` along the exit axis; an all-empty path gives 0."""
    groups = np.asarray(groups, dtype=float)
    gmin = groups.min(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(groups > 0, (groups - gmin) / np.where(groups > 0, groups, 1.0), 0.0)
    return r


def one_hot(ids: np.ndarray, n_exits: int) -> np.ndarray:
    """Rows with a 1 at exit ``id`` (1-based); id 0 gives an all-zero row."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    out = np.zeros((len(ids), n_exits))
    has = ids > 0
    out[np.flatnonzero(has), ids[has] - 1] = 1.0
    return out


def attribute_arrays(positions, cells, counts, densities, current, indicated,
                     scenario: Scenario, table: DistanceTable, critical_density) -> AttributeVector:
    """Attributes for many pedestrians at once; every field is ``(N, E)``.

    ``cells`` are 0-based cell indices of the pedestrians, ``counts`` the
    per-cell occupancy, ``densities`` the measured density at each exit,
    ``current``/``indicated`` the previous choice and controller indication
    as exit ids (0 = none).
    """
    e = scenario.n_exits
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(positions)
    dist = np.clip(pedestrian_exit_distances(positions, scenario) / table.max_distance, 0.0, 1.0)
    width = np.broadcast_to(scenario.exit_widths / scenario.exit_widths.max(), (n, e))
    groups = group_sizes(counts, table.cell_to_exit)[np.asarray(cells, dtype=np.int64)]
    excon = np.broadcast_to(np.asarray(densities, float) / np.asarray(critical_density, float), (n, e))
    return AttributeVector(
        dist_norm=dist,
        width_norm=width,
        group_ratio=group_ratio(groups),
        excon_norm=excon,
        personal=one_hot(current, e),
        system=one_hot(indicated, e),
    )


def compute_attributes(ped, sim_state, scenario: Scenario, distance_table: DistanceTable,
                       exit_dynamics, controller_map=None, densities=None) -> AttributeVector:
    """Attributes of a single pedestrian (see :func:`attribute_arrays`)."""
    from .motion import cell_counts, exit_densities

    counts = cell_counts(sim_state, scenario)
    if densities is None:
        densities = exit_densities(sim_state, scenario, counts=counts)
    pos = np.asarray(ped.position, dtype=float)
    cell = locate_cells(pos, scenario)
    indicated = 0
    if controller_map is not None:
        indicated = int(controller_map.assignment[cell[0]])
    crit = [d.rho_crit for d in exit_dynamics]
    av = attribute_arrays(pos, cell, counts, densities, [ped.target_exit], [indicated],
                          scenario, distance_table, crit)
    return AttributeVector(*(np.array(getattr(av, f)[0]) for f in AttributeVector.__dataclass_fields__))


# ---------------------------------------------------------------------------
# utility and choice
# ---------------------------------------------------------------------------

def beta_p_of_t(beta_P: float, n_now: int, n_initial: int) -> float:
    """Weight on the previous choice; zero at the start, ``beta_P`` once everyone is out."""
    if n_initial <= 0:
        raise ValueError("n_initial must be > 0")
    frac = min(max(n_now / n_initial, 0.0), 1.0)
    return beta_P * (1.0 - frac)


def utility(attrs: AttributeVector, betas: BetaConfig, n_now: int, n_initial: int) -> np.ndarray:
    bp = beta_p_of_t(betas.beta_P, n_now, n_initial) if n_initial > 0 else 0.0
    return (
        betas.beta_D * attrs.dist_norm
        + betas.beta_W * attrs.width_norm
        + betas.beta_G * attrs.group_ratio
        + betas.beta_E * attrs.excon_norm
        + bp * attrs.personal
        + betas.beta_SYS * attrs.system
    )


def choice_probabilities(V) -> np.ndarray:
    """Softmax along the last axis."""
    V = np.asarray(V, dtype=float)
    if not np.all(np.isfinite(V)):
        raise ValueError("utilities must be finite")
    z = np.exp(V - V.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def sample_choices(probabilities: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row (exit-id order); returns 1-based exit ids."""
    p = np.atleast_2d(probabilities)
    cdf = np.cumsum(p, axis=1)
    idx = (cdf <= np.asarray(u).reshape(-1, 1)).sum(axis=1)
    # guard against round-off pushing past the last exit
    idx = np.minimum(idx, p.shape[1] - 1)
    while True:
        zero = p[np.arange(len(idx)), idx] == 0
        if not zero.any():
            break
        idx[zero] -= 1
    return idx + 1


def decide(ped, probabilities, rng: np.random.Generator) -> ChoiceOutcome:
    """Sample an exit and update ``ped``'s target and decision-change counter."""
    p = np.asarray(probabilities, dtype=float)
    chosen = int(sample_choices(p, np.array([rng.random()]))[0])
    changed = ped.target_exit != 0 and chosen != ped.target_exit
    if changed:
        ped.decision_changes += 1
    ped.target_exit = chosen
    return ChoiceOutcome(chosen, bool(changed), p)


def decision_cycle(state, scenario: Scenario, table: DistanceTable, critical_density,
                   betas: BetaConfig, rng: np.random.Generator, rows=None,
                   densities=None, counts=None, n_initial: int | None = None) -> int:
    """Every active pedestrian (or the given ``rows``) re-decides.

    Compliant pedestrians take the controller's indication for their cell.
    With no indication available they fall back to ``betas``. Returns the
    number of decision changes made in this cycle.
    """
    from .motion import cell_counts, exit_densities

    if rows is None:
        rows = state.active_indices()
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        return 0
    if counts is None:
        counts = cell_counts(state, scenario)
    if densities is None:
        densities = exit_densities(state, scenario, counts=counts)
    n_init = state.spawned if n_initial is None else n_initial

    follow = state.compliant[rows] & (state.system[rows] > 0)
    chosen = np.empty(len(rows), dtype=np.int64)
    chosen[follow] = state.system[rows[follow]]

    free = ~follow
    # one uniform per pedestrian in row order keeps the stream layout independent of compliance
    u = rng.random(len(rows))
    if free.any():
        fr = rows[free]
        cells = locate_cells(state.pos[fr], scenario)
        attrs = attribute_arrays(state.pos[fr], cells, counts, densities, state.target[fr],
                                 state.system[fr], scenario, table, critical_density)
        V = utility(attrs, betas, state.n_active, n_init)
        chosen[free] = sample_choices(choice_probabilities(V), u[free])

    prev = state.target[rows]
    changed = (prev > 0) & (chosen != prev)
    state.changes[rows[changed]] += 1
    state.target[rows] = chosen
    return int(changed.sum())
