"""Microscopic pedestrian motion with the social force model.

Forces follow the classical circular specification: relaxation toward the
preferred velocity, exponential social repulsion, and body compression /
sliding friction on contact, for both pedestrian pairs and walls. Pair forces
use a uniform grid (spatial hash) with a 2 m cutoff. The hot loop is compiled
with numba.

Besides stepping, this module injects external flows, blocks or locks gates,
and measures density and flow at each exit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .scenario import BODY_RADIUS, MIN_SEPARATION, Scenario, build_distance_table, locate_cells, wall_segments


class SimulationDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class SFMParams:
    tau: float = 0.5
    mass: float = 80.0
    strength: float = 2000.0      # social repulsion A (N)
    range: float = 0.08           # social repulsion B (m)
    body: float = 1.2e5           # body compression k (kg/s^2)
    friction: float = 2.4e5       # sliding friction kappa (kg/(m s))
    radius: float = BODY_RADIUS
    cutoff: float = 2.0
    speed_cap: float = 1.3
    gate_inset: float = 0.35      # aim at the gate, not at its jambs
    aim_offset: float = 1.0       # aim point lies this far beyond the gate line
    zone_depth: float = 3.0       # restricted area in front of a blocked gate
    zone_factor: float = 0.01     # speed limit inside that area, as a fraction of preferred speed
    wall_tolerance: float = 0.005 # deepest allowed body overlap with a wall (m)


DEFAULT_PARAMS = SFMParams()


@dataclass
class PedestrianState:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    preferred_speed: float
    target_exit: int = 0          # exit id, 0 before the first decision
    compliant: bool = False
    decision_changes: int = 0
    evacuated_at: float | None = None


@dataclass(frozen=True)
class DensitySample:
    time: float
    exit_id: int
    density: float   # peds/m^2 over the exit's measurement area
    flow: float      # peds/s through the gate over the last interval


@dataclass
class SimState:
    """Mutable state of one run. Rows are never removed; evacuated rows go inactive."""

    pos: np.ndarray
    vel: np.ndarray
    v0: np.ndarray
    target: np.ndarray
    compliant: np.ndarray
    changes: np.ndarray
    evac_time: np.ndarray
    exit_used: np.ndarray
    active: np.ndarray
    system: np.ndarray            # indicated exit id from the last broadcast (0 = none)
    injected: np.ndarray
    n_exits: int
    clock: float = 0.0
    spawned: int = 0
    n_injected: int = 0
    evac_counts: np.ndarray = None
    crossings: np.ndarray = None  # gate crossings since the last measurement
    blocked: np.ndarray = None
    locked: np.ndarray = None
    backlog: dict = field(default_factory=dict)
    _walls: np.ndarray | None = None

    @classmethod
    def from_population(cls, population, scenario: Scenario) -> "SimState":
        n = len(population)
        e = scenario.n_exits
        state = cls(
            pos=np.array([p.position for p in population], dtype=float).reshape(n, 2),
            vel=np.array([p.velocity for p in population], dtype=float).reshape(n, 2),
            v0=np.array([p.preferred_speed for p in population], dtype=float),
            target=np.array([p.target_exit for p in population], dtype=np.int64),
            compliant=np.array([p.compliant for p in population], dtype=bool),
            changes=np.array([p.decision_changes for p in population], dtype=np.int64),
            evac_time=np.full(n, np.nan),
            exit_used=np.zeros(n, dtype=np.int64),
            active=np.ones(n, dtype=bool),
            system=np.zeros(n, dtype=np.int64),
            injected=np.zeros(n, dtype=bool),
            n_exits=e,
            spawned=n,
            evac_counts=np.zeros(e, dtype=np.int64),
            crossings=np.zeros(e, dtype=np.int64),
            blocked=np.array([g.blocked for g in scenario.exits], dtype=bool),
            locked=np.zeros(e, dtype=bool),
        )
        return state

    @property
    def n_rows(self) -> int:
        return len(self.v0)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def n_evacuated(self) -> int:
        return int(self.evac_counts.sum())

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def conserved(self) -> bool:
        return self.spawned + self.n_injected == self.n_evacuated + self.n_active

    def pedestrians(self) -> list[PedestrianState]:
        out = []
        for i in range(self.n_rows):
            t = self.evac_time[i]
            out.append(PedestrianState(
                id=i, position=self.pos[i].copy(), velocity=self.vel[i].copy(),
                preferred_speed=float(self.v0[i]), target_exit=int(self.target[i]),
                compliant=bool(self.compliant[i]), decision_changes=int(self.changes[i]),
                evacuated_at=None if np.isnan(t) else float(t),
            ))
        return out

    def add_pedestrians(self, positions, speeds, target, compliant) -> np.ndarray:
        """Append pedestrians (used by injection); returns their row indices."""
        k = len(speeds)
        start = self.n_rows
        self.pos = np.vstack([self.pos, np.asarray(positions, dtype=float).reshape(k, 2)])
        self.vel = np.vstack([self.vel, np.zeros((k, 2))])
        self.v0 = np.concatenate([self.v0, speeds])
        self.target = np.concatenate([self.target, np.full(k, target, dtype=np.int64)])
        self.compliant = np.concatenate([self.compliant, np.asarray(compliant, dtype=bool).reshape(k)])
        self.changes = np.concatenate([self.changes, np.zeros(k, dtype=np.int64)])
        self.evac_time = np.concatenate([self.evac_time, np.full(k, np.nan)])
        self.exit_used = np.concatenate([self.exit_used, np.zeros(k, dtype=np.int64)])
        self.active = np.concatenate([self.active, np.ones(k, dtype=bool)])
        self.system = np.concatenate([self.system, np.zeros(k, dtype=np.int64)])
        self.injected = np.concatenate([self.injected, np.ones(k, dtype=bool)])
        self.n_injected += k
        return np.arange(start, start + k)

    def walls(self, scenario: Scenario) -> np.ndarray:
        """Wall segments, including any locked gates (which behave as walls)."""
        if self._walls is None:
            open_gates = [g.segment for g, lk in zip(scenario.exits, self.locked) if not lk]
            self._walls = wall_segments(scenario.boundary, open_gates)
        return self._walls


# ---------------------------------------------------------------------------
# numba kernel
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _orient(ax, ay, bx, by, cx, cy):
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if v > 1e-12:
        return 1
    if v < -1e-12:
        return -1
    return 0


@numba.njit(cache=True)
def _crosses(px, py, qx, qy, ax, ay, bx, by):
    o1 = _orient(px, py, qx, qy, ax, ay)
    o2 = _orient(px, py, qx, qy, bx, by)
    o3 = _orient(ax, ay, bx, by, px, py)
    o4 = _orient(ax, ay, bx, by, qx, qy)
    if o1 != o2 and o3 != o4:
        return True
    # touching the line at the end of the step counts as crossing it
    if o4 == 0 and o3 != 0:
        t = ((qx - ax) * (bx - ax) + (qy - ay) * (by - ay)) / ((bx - ax) ** 2 + (by - ay) ** 2)
        return 0.0 <= t <= 1.0
    return False


@numba.njit(cache=True)
def _step_kernel(pos, vel, v0, target, idx, gates, normals, gate_open, zone_gate,
                 walls, dt, tau, mass, strength, brange, kbody, kappa, radius,
                 cutoff, cap, inset, aim_offset, zone_depth, zone_factor,
                 min_gap, crossed):
    n = idx.size
    if n == 0:
        return
    xmin = 1e300
    ymin = 1e300
    xmax = -1e300
    ymax = -1e300
    for k in range(n):
        i = idx[k]
        xmin = min(xmin, pos[i, 0])
        ymin = min(ymin, pos[i, 1])
        xmax = max(xmax, pos[i, 0])
        ymax = max(ymax, pos[i, 1])
    ncx = int((xmax - xmin) / cutoff) + 1
    ncy = int((ymax - ymin) / cutoff) + 1
    head = np.full(ncx * ncy, -1, np.int64)
    nxt = np.empty(n, np.int64)
    cx_of = np.empty(n, np.int64)
    cy_of = np.empty(n, np.int64)
    for k in range(n):
        i = idx[k]
        cx = int((pos[i, 0] - xmin) / cutoff)
        cy = int((pos[i, 1] - ymin) / cutoff)
        cx_of[k] = cx
        cy_of[k] = cy
        c = cy * ncx + cx
        nxt[k] = head[c]
        head[c] = k

    new_pos = np.empty((n, 2))
    new_vel = np.empty((n, 2))
    cut2 = cutoff * cutoff
    diam = 2.0 * radius
    n_walls = walls.shape[0]
    n_gates = gates.shape[0]

    for k in range(n):
        i = idx[k]
        px = pos[i, 0]
        py = pos[i, 1]
        vx = vel[i, 0]
        vy = vel[i, 1]

        # desired direction: toward the (inset) target gate, aiming past its line
        g = target[i] - 1
        ax = gates[g, 0]
        ay = gates[g, 1]
        bx = gates[g, 2]
        by = gates[g, 3]
        glen = np.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
        ux = (bx - ax) / glen
        uy = (by - ay) / glen
        ins = min(inset, 0.25 * glen)
        s = (px - ax) * ux + (py - ay) * uy
        s = min(max(s, ins), glen - ins)
        tx = ax + s * ux + aim_offset * normals[g, 0]
        ty = ay + s * uy + aim_offset * normals[g, 1]
        ex = tx - px
        ey = ty - py
        en = np.sqrt(ex * ex + ey * ey)
        if en > 0.0:
            ex /= en
            ey /= en

        factor = 1.0
        for z in range(n_gates):
            if not zone_gate[z]:
                continue
            zax = gates[z, 0]
            zay = gates[z, 1]
            zl = np.sqrt((gates[z, 2] - zax) ** 2 + (gates[z, 3] - zay) ** 2)
            zux = (gates[z, 2] - zax) / zl
            zuy = (gates[z, 3] - zay) / zl
            along = (px - zax) * zux + (py - zay) * zuy
            depth = -((px - zax) * normals[z, 0] + (py - zay) * normals[z, 1])
            if 0.0 <= along <= zl and -radius <= depth <= zone_depth:
                factor = zone_factor
        vpref = v0[i]

        fx = mass * (vpref * ex - vx) / tau
        fy = mass * (vpref * ey - vy) / tau

        # pedestrian interactions
        cx0 = cx_of[k]
        cy0 = cy_of[k]
        for gy in range(max(cy0 - 1, 0), min(cy0 + 2, ncy)):
            for gx in range(max(cx0 - 1, 0), min(cx0 + 2, ncx)):
                m = head[gy * ncx + gx]
                while m != -1:
                    if m != k:
                        j = idx[m]
                        dx = px - pos[j, 0]
                        dy = py - pos[j, 1]
                        d2 = dx * dx + dy * dy
                        if d2 < cut2:
                            d = np.sqrt(d2)
                            if d > 1e-9:
                                nx = dx / d
                                ny = dy / d
                            else:
                                d = 0.0
                                nx = 1.0 if i < j else -1.0
                                ny = 0.0
                            overlap = diam - d
                            rep = strength * np.exp(overlap / brange)
                            if overlap > 0.0:
                                rep += kbody * overlap
                                tnx = -ny
                                tny = nx
                                dvt = (vel[j, 0] - vx) * tnx + (vel[j, 1] - vy) * tny
                                fr = kappa * overlap * dvt
                                fx += fr * tnx
                                fy += fr * tny
                            fx += rep * nx
                            fy += rep * ny
                    m = nxt[m]

        # walls
        for w in range(n_walls):
            wax = walls[w, 0]
            way = walls[w, 1]
            wdx = walls[w, 2] - wax
            wdy = walls[w, 3] - way
            wl2 = wdx * wdx + wdy * wdy
            t = ((px - wax) * wdx + (py - way) * wdy) / wl2
            t = min(max(t, 0.0), 1.0)
            qx = px - (wax + t * wdx)
            qy = py - (way + t * wdy)
            d2 = qx * qx + qy * qy
            if d2 < cut2 and d2 > 1e-18:
                d = np.sqrt(d2)
                nx = qx / d
                ny = qy / d
                overlap = radius - d
                rep = strength * np.exp(overlap / brange)
                if overlap > 0.0:
                    rep += kbody * overlap
                    tnx = -ny
                    tny = nx
                    fr = -kappa * overlap * (vx * tnx + vy * tny)
                    fx += fr * tnx
                    fy += fr * tny
                fx += rep * nx
                fy += rep * ny

        nvx = vx + fx / mass * dt
        nvy = vy + fy / mass * dt
        sp = np.sqrt(nvx * nvx + nvy * nvy)
        vmax = cap * vpref if factor == 1.0 else vpref * factor
        if sp > vmax:
            nvx *= vmax / sp
            nvy *= vmax / sp
        new_vel[k, 0] = nvx
        new_vel[k, 1] = nvy
        new_pos[k, 0] = px + nvx * dt
        new_pos[k, 1] = py + nvy * dt

    for k in range(n):
        i = idx[k]
        px = pos[i, 0]
        py = pos[i, 1]
        qx = new_pos[k, 0]
        qy = new_pos[k, 1]
        crossed[k] = -1
        for g in range(n_gates):
            if gate_open[g] and _crosses(px, py, qx, qy, gates[g, 0], gates[g, 1], gates[g, 2], gates[g, 3]):
                crossed[k] = g
                break
        if crossed[k] < 0:
            for w in range(n_walls):
                if _crosses(px, py, qx, qy, walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3]):
                    qx = px
                    qy = py
                    new_vel[k, 0] = 0.0
                    new_vel[k, 1] = 0.0
                    break
            # hard contact: crowd pressure may not squeeze a body into a wall
            for _ in range(2):
                for w in range(n_walls):
                    wax = walls[w, 0]
                    way = walls[w, 1]
                    wdx = walls[w, 2] - wax
                    wdy = walls[w, 3] - way
                    t = ((qx - wax) * wdx + (qy - way) * wdy) / (wdx * wdx + wdy * wdy)
                    t = min(max(t, 0.0), 1.0)
                    ox = qx - (wax + t * wdx)
                    oy = qy - (way + t * wdy)
                    d = np.sqrt(ox * ox + oy * oy)
                    if 1e-12 < d < min_gap:
                        nx = ox / d
                        ny = oy / d
                        qx += (min_gap - d) * nx
                        qy += (min_gap - d) * ny
                        vn = new_vel[k, 0] * nx + new_vel[k, 1] * ny
                        if vn < 0.0:
                            new_vel[k, 0] -= vn * nx
                            new_vel[k, 1] -= vn * ny
        pos[i, 0] = qx
        pos[i, 1] = qy
        vel[i, 0] = new_vel[k, 0]
        vel[i, 1] = new_vel[k, 1]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def sfm_step(state: SimState, scenario: Scenario, dt: float = 0.05,
             params: SFMParams = DEFAULT_PARAMS) -> SimState:
    """Advance every active pedestrian by ``dt`` seconds (in place).

    Pedestrians whose displacement crosses an open gate are evacuated and
    removed. Returns ``state`` for chaining.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt must lie in (0, 0.1], got {dt}")
    idx = state.active_indices()
    if len(idx) and np.any(state.target[idx] < 1):
        raise ValueError("every active pedestrian needs a target exit before stepping")
    _check_finite(state, idx)
    crossed = np.empty(len(idx), dtype=np.int64)
    _step_kernel(
        state.pos, state.vel, state.v0, state.target, idx,
        scenario.gate_array, scenario.gate_normals, ~state.locked, state.blocked,
        state.walls(scenario), dt, params.tau, params.mass, params.strength,
        params.range, params.body, params.friction, params.radius, params.cutoff,
        params.speed_cap, params.gate_inset, params.aim_offset, params.zone_depth,
        params.zone_factor, params.radius - params.wall_tolerance, crossed,
    )
    _check_finite(state, idx)
    state.clock += dt
    out = crossed >= 0
    if out.any():
        rows = idx[out]
        gates = crossed[out]
        state.active[rows] = False
        state.evac_time[rows] = state.clock
        state.exit_used[rows] = gates + 1
        np.add.at(state.evac_counts, gates, 1)
        np.add.at(state.crossings, gates, 1)
    return state


def _check_finite(state: SimState, idx: np.ndarray) -> None:
    ok = np.isfinite(state.pos[idx]).all(axis=1) & np.isfinite(state.vel[idx]).all(axis=1)
    if not ok.all():
        bad = idx[~ok]
        raise SimulationDivergence(
            f"non-finite state at t={state.clock:.2f}s for pedestrians {bad[:10].tolist()}"
        )


def nearest_open_exit(point, scenario: Scenario, state: SimState) -> int:
    d = np.array([np.linalg.norm(point - 0.5 * (g.a + g.b)) for g in scenario.exits])
    usable = ~(state.blocked | state.locked)
    if usable.any():
        d[~usable] = np.inf
    return int(np.argmin(d)) + 1


@numba.njit(cache=True)
def _inside(x, y, poly):
    # even-odd ray casting
    n = poly.shape[0]
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = poly[i, 0], poly[i, 1]
        xj, yj = poly[j, 0], poly[j, 1]
        if (yi > y) != (yj > y):
            xc = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < xc:
                inside = not inside
        j = i
    return inside


@numba.njit(cache=True)
def _place_kernel(pos, active, cands, walls, poly, need, sep, body):
    """Scan candidate spots in order; accept those clear of people, walls and each other."""
    m = cands.shape[0]
    cx = cands[0, 0]
    cy = cands[0, 1]
    reach = 0.0
    for c in range(m):
        reach = max(reach, np.hypot(cands[c, 0] - cx, cands[c, 1] - cy))
    reach += 2.0 * sep
    near = np.empty(pos.shape[0], np.int64)
    n_near = 0
    for i in range(pos.shape[0]):
        if active[i] and np.hypot(pos[i, 0] - cx, pos[i, 1] - cy) < reach:
            near[n_near] = i
            n_near += 1
    taken = np.empty(need, np.int64)
    n_taken = 0
    sep2 = sep * sep
    for c in range(m):
        if n_taken == need:
            break
        x = cands[c, 0]
        y = cands[c, 1]
        if not _inside(x, y, poly):
            continue
        ok = True
        for k in range(n_near):
            i = near[k]
            if (pos[i, 0] - x) ** 2 + (pos[i, 1] - y) ** 2 < sep2:
                ok = False
                break
        if ok:
            for k in range(n_taken):
                t = taken[k]
                if (cands[t, 0] - x) ** 2 + (cands[t, 1] - y) ** 2 < sep2:
                    ok = False
                    break
        if ok:
            for w in range(walls.shape[0]):
                ax = walls[w, 0]
                ay = walls[w, 1]
                dx = walls[w, 2] - ax
                dy = walls[w, 3] - ay
                t = ((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy)
                t = min(max(t, 0.0), 1.0)
                if (x - ax - t * dx) ** 2 + (y - ay - t * dy) ** 2 < body * body:
                    ok = False
                    break
        if ok:
            taken[n_taken] = c
            n_taken += 1
    return taken[:n_taken]


def place_near(state: SimState, scenario: Scenario, point, rng: np.random.Generator, n: int = 1,
               radius: float = 1.5, tries: int = 12) -> np.ndarray:
    """Up to ``n`` free spots within ``radius`` of ``point``; fewer when crowded."""
    point = np.asarray(point, dtype=float)
    m = max(n, 1) * tries
    u = rng.random((m, 2))
    r = radius * np.sqrt(u[:, 0])
    a = 2.0 * np.pi * u[:, 1]
    cands = np.empty((m + 1, 2))
    cands[0] = point   # anchor for the neighbour search; only used if free
    cands[1:, 0] = point[0] + r * np.cos(a)
    cands[1:, 1] = point[1] + r * np.sin(a)
    poly = np.asarray(scenario.boundary, dtype=float)
    idx = _place_kernel(state.pos, state.active, cands, state.walls(scenario), poly,
                        n, MIN_SEPARATION, BODY_RADIUS)
    return cands[idx]


def inject_at(state: SimState, scenario: Scenario, source, point, n_new: int,
              rng: np.random.Generator, target: int | None = None,
              compliance: float = 0.0, compliance_rng: np.random.Generator | None = None,
              max_per_call: int = 4) -> np.ndarray:
    """Add ``n_new`` arrivals at ``point``; arrivals that do not fit wait in a backlog.

    At most ``max_per_call`` pedestrians are placed per call, so a long
    backlog drains at a bounded rate instead of being retried in full.
    """
    pending = state.backlog.get(source, 0) + n_new
    if pending == 0:
        return np.zeros(0, dtype=np.int64)
    spots = place_near(state, scenario, point, rng, n=min(pending, max_per_call))
    k = len(spots)
    state.backlog[source] = pending - k
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    speeds = rng.uniform(*scenario.speed_range, size=k)
    tgt = target if target is not None else nearest_open_exit(np.asarray(point), scenario, state)
    crng = compliance_rng if compliance_rng is not None else rng
    compliant = crng.uniform(size=k) < compliance if compliance > 0 else np.zeros(k, dtype=bool)
    return state.add_pedestrians(spots, speeds, tgt, compliant)


def inject_external_flow(state: SimState, scenario: Scenario, exit_id: int, rate: float, dt: float,
                         rng: np.random.Generator, target: int | None = None,
                         compliance: float = 0.0, compliance_rng=None) -> np.ndarray:
    """Poisson arrivals at ``rate`` peds/min at the entry point of ``exit_id``.

    Returns the row indices of the pedestrians added this step. Without an
    explicit ``target`` they head for the nearest usable exit until the
    behaviour model takes over.
    """
    gate = scenario.exits[scenario.exit_index(exit_id)]
    if gate.entry_point is None:
        raise ValueError(f"exit {exit_id} has no entry point")
    n_new = int(rng.poisson(rate / 60.0 * dt)) if rate > 0 else 0
    if n_new == 0 and state.backlog.get(("entry", exit_id), 0) == 0:
        return np.zeros(0, dtype=np.int64)
    return inject_at(state, scenario, ("entry", exit_id), gate.entry_point, n_new, rng,
                     target, compliance, compliance_rng)


def block_exit(state: SimState, exit_id: int, scenario: Scenario | None = None) -> SimState:
    """Slow pedestrians in the restricted area in front of the gate to 1/100 speed."""
    if not 1 <= exit_id <= state.n_exits:
        raise KeyError(f"unknown exit id {exit_id}")
    state.blocked[exit_id - 1] = True
    return state


def unblock_exit(state: SimState, exit_id: int) -> SimState:
    if not 1 <= exit_id <= state.n_exits:
        raise KeyError(f"unknown exit id {exit_id}")
    state.blocked[exit_id - 1] = False
    return state


def lock_exit(state: SimState, exit_id: int) -> SimState:
    """Close the gate entirely: it becomes a wall and no crossings happen."""
    if not 1 <= exit_id <= state.n_exits:
        raise KeyError(f"unknown exit id {exit_id}")
    state.locked[exit_id - 1] = True
    state._walls = None
    return state


def unlock_exit(state: SimState, exit_id: int) -> SimState:
    if not 1 <= exit_id <= state.n_exits:
        raise KeyError(f"unknown exit id {exit_id}")
    state.locked[exit_id - 1] = False
    state._walls = None
    return state


class MeasurementAreas:
    """The four cells closest to each gate, and the union's walkable area."""

    def __init__(self, scenario: Scenario, n_cells: int = 4):
        table = build_distance_table(scenario).cell_to_exit
        k = min(n_cells, scenario.n_cells)
        # stable sort keeps the lowest cell id on distance ties
        self.cells = np.argsort(table, axis=0, kind="stable")[:k].T.copy()   # (E, k)
        self.areas = scenario.cell_areas[self.cells].sum(axis=1)


def cell_counts(state: SimState, scenario: Scenario) -> np.ndarray:
    idx = state.active_indices()
    cells = locate_cells(state.pos[idx], scenario)
    return np.bincount(cells, minlength=scenario.n_cells)


def exit_densities(state: SimState, scenario: Scenario, areas: MeasurementAreas | None = None,
                   counts: np.ndarray | None = None) -> np.ndarray:
    areas = areas or MeasurementAreas(scenario)
    counts = cell_counts(state, scenario) if counts is None else counts
    return counts[areas.cells].sum(axis=1) / areas.areas


def measure(state: SimState, scenario: Scenario, interval: float = 2.0,
            areas: MeasurementAreas | None = None) -> list[DensitySample]:
    """Density and flow at every exit; resets the per-interval crossing counters."""
    dens = exit_densities(state, scenario, areas)
    flows = state.crossings / interval
    samples = [
        DensitySample(state.clock, j + 1, float(dens[j]), float(flows[j]))
        for j in range(scenario.n_exits)
    ]
    state.crossings[:] = 0
    return samples
