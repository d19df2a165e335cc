"""Evacuation scenarios: facility boundary, exit gates, hexagonal cells, population.

Scenarios are described by a YAML file (see ``data/madrid_arena.yaml`` for the
full schema) and are immutable once loaded, so they can be shared freely
between simulation runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from shapely import contains_xy
from shapely.geometry import LineString, Point, Polygon

from .geometry import (
    hex_lattice_centers,
    hexagon_vertices,
    point_segment_distance,
)

BODY_RADIUS = 0.25
MIN_SEPARATION = 2 * BODY_RADIUS
BUNDLED = ("madrid_arena", "desk")


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed or violates an invariant."""


class PlacementError(RuntimeError):
    """Raised when the requested population does not fit in the facility."""


@dataclass(frozen=True)
class ExitGate:
    id: int
    width: float
    segment: tuple[tuple[float, float], tuple[float, float]]
    entry_point: tuple[float, float] | None = None
    blocked: bool = False

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.segment[0], dtype=float)

    @property
    def b(self) -> np.ndarray:
        return np.asarray(self.segment[1], dtype=float)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.a + self.b)


@dataclass(frozen=True)
class Cell:
    id: int
    center: tuple[float, float]
    vertices: tuple[tuple[float, float], ...]
    area: float  # walkable (clipped) area in m^2


@dataclass(frozen=True)
class ExternalFlowSpec:
    rate_peds_per_min: float = 0.0
    n_inflow: int = 0
    n_blocked: int = 0
    # ``None`` means inflow/blocked exits are drawn per run from the run seed
    inflow_ids: tuple[int, ...] | None = None
    blocked_ids: tuple[int, ...] | None = None
    duration_s: float = 0.0

    @property
    def random_selection(self) -> bool:
        return self.inflow_ids is None


@dataclass(frozen=True)
class Scenario:
    name: str
    boundary: tuple[tuple[float, float], ...]
    exits: tuple[ExitGate, ...]
    cells: tuple[Cell, ...]
    initial_population: int
    speed_range: tuple[float, float]
    sim_time_cap: float
    external_flows: ExternalFlowSpec = field(default_factory=ExternalFlowSpec)
    cell_width: float = 6.0
    population_seed: int = 0

    # -- convenience views -------------------------------------------------
    @property
    def external_flow_rate(self) -> float:
        return self.external_flows.rate_peds_per_min

    @property
    def n_inflow_exits(self) -> int:
        return self.external_flows.n_inflow

    @property
    def n_blocked_exits(self) -> int:
        return self.external_flows.n_blocked

    @property
    def n_exits(self) -> int:
        return len(self.exits)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def polygon(self) -> Polygon:
        return Polygon(self.boundary)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return np.array([c.center for c in self.cells], dtype=float)

    @cached_property
    def cell_areas(self) -> np.ndarray:
        return np.array([c.area for c in self.cells], dtype=float)

    @cached_property
    def exit_widths(self) -> np.ndarray:
        return np.array([e.width for e in self.exits], dtype=float)

    @cached_property
    def gate_array(self) -> np.ndarray:
        """``(E, 4)`` array of gate segments ``[ax, ay, bx, by]``."""
        return np.array([[*e.a, *e.b] for e in self.exits], dtype=float)

    @cached_property
    def gate_normals(self) -> np.ndarray:
        """Outward unit normals of the gate segments."""
        normals = []
        for e in self.exits:
            d = e.b - e.a
            n = np.array([d[1], -d[0]]) / np.linalg.norm(d)
            probe = e.midpoint + 0.05 * n
            if self.polygon.contains(Point(probe)):
                n = -n
            normals.append(n)
        return np.array(normals)

    @cached_property
    def wall_array(self) -> np.ndarray:
        """Boundary edges with the gate openings cut out, as ``(W, 4)``."""
        return wall_segments(self.boundary, [e.segment for e in self.exits])

    def exit_index(self, exit_id: int) -> int:
        if not 1 <= exit_id <= len(self.exits):
            raise KeyError(f"unknown exit id {exit_id}")
        return exit_id - 1

    def contains(self, point) -> bool:
        return bool(self.polygon.covers(Point(point)))


@dataclass(frozen=True)
class DistanceTable:
    cell_to_exit: np.ndarray  # (C, E) metres
    max_distance: float

    def normalized(self) -> np.ndarray:
        return self.cell_to_exit / self.max_distance


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise KeyError(f"no bundled scenario {name!r}; choose from {BUNDLED}")
    return Path(str(resources.files("cellevac") / "data" / f"{name}.yaml"))


def load_scenario(config_file) -> Scenario:
    """Load and validate a scenario file.

    ``config_file`` is a path, or the name of a bundled scenario
    (``"madrid_arena"`` or ``"desk"``).
    """
    if isinstance(config_file, str) and config_file in BUNDLED:
        config_file = bundled_path(config_file)
    path = Path(config_file)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario file ({exc})") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(f"{path}: parse error at {where}: {problem}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return scenario_from_dict(raw, source=str(path))


def _point(value, where: str) -> tuple[float, float]:
    try:
        x, y = value
        return float(x), float(y)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected a 2D point [x, y], got {value!r}") from None


def _require(raw: dict, key: str, where: str):
    if key not in raw:
        raise ScenarioError(f"{where}: missing required field '{key}'")
    return raw[key]


def scenario_from_dict(raw: dict[str, Any], source: str = "<dict>") -> Scenario:
    """Build a validated :class:`Scenario` from an already-parsed mapping."""
    name = str(raw.get("name", Path(source).stem))

    boundary_raw = _require(raw, "boundary", source)
    if not isinstance(boundary_raw, list) or len(boundary_raw) < 3:
        raise ScenarioError(f"{source}: boundary must list at least 3 vertices")
    boundary = tuple(_point(p, f"{source}: boundary[{i}]") for i, p in enumerate(boundary_raw))
    poly = Polygon(boundary)
    if not poly.is_valid or poly.area <= 0:
        raise ScenarioError(f"{source}: boundary is not a simple polygon with positive area")

    exits = tuple(_parse_exit(e, i, poly, source) for i, e in enumerate(_require(raw, "exits", source)))
    ids = sorted(e.id for e in exits)
    if ids != list(range(1, len(exits) + 1)):
        raise ScenarioError(f"{source}: exit ids must be unique and contiguous from 1, got {ids}")
    exits = tuple(sorted(exits, key=lambda e: e.id))

    cells_raw = _require(raw, "cells", source)
    cells, cell_width = _parse_cells(cells_raw, poly, source)

    pop = _require(raw, "population", source)
    count = int(_require(pop, "count", f"{source}: population"))
    if count < 0:
        raise ScenarioError(f"{source}: population.count must be >= 0 (got {count})")
    smin = float(_require(pop, "speed_min", f"{source}: population"))
    smax = float(_require(pop, "speed_max", f"{source}: population"))
    if not smin < smax:
        raise ScenarioError(f"{source}: population speed_min < speed_max violated ({smin} >= {smax})")
    if smin <= 0:
        raise ScenarioError(f"{source}: population.speed_min must be > 0")
    pop_seed = int(pop.get("seed", 0))

    flows = _parse_flows(raw.get("external_flows") or {}, exits, source)

    limits = raw.get("limits") or {}
    cap = float(limits.get("sim_time_cap_s", 900.0))
    if cap <= 0:
        raise ScenarioError(f"{source}: limits.sim_time_cap_s must be > 0 (got {cap})")

    return Scenario(
        name=name,
        boundary=boundary,
        exits=exits,
        cells=cells,
        initial_population=count,
        speed_range=(smin, smax),
        sim_time_cap=cap,
        external_flows=flows,
        cell_width=cell_width,
        population_seed=pop_seed,
    )


def _parse_exit(raw, index: int, poly: Polygon, source: str) -> ExitGate:
    where = f"{source}: exits[{index}]"
    if not isinstance(raw, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    eid = int(_require(raw, "id", where))
    width = float(_require(raw, "width", where))
    if width <= 0:
        raise ScenarioError(f"{where}.width: invariant width > 0 violated (got {width})")
    seg_raw = _require(raw, "segment", where)
    if not isinstance(seg_raw, list) or len(seg_raw) != 2:
        raise ScenarioError(f"{where}.segment: expected two points")
    a = _point(seg_raw[0], f"{where}.segment[0]")
    b = _point(seg_raw[1], f"{where}.segment[1]")
    length = float(np.hypot(b[0] - a[0], b[1] - a[1]))
    if abs(length - width) > 1e-6:
        raise ScenarioError(f"{where}: segment length {length:.6g} does not match width {width:.6g}")
    ring = poly.exterior
    for p in (a, b, ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)):
        if ring.distance(Point(p)) > 1e-6:
            raise ScenarioError(f"{where}.segment: gate segment must lie on the facility boundary")
    if LineString([a, b]).difference(ring.buffer(1e-6)).length > 1e-6:
        raise ScenarioError(f"{where}.segment: gate segment must lie on the facility boundary")
    entry = raw.get("entry_point")
    if entry is not None:
        entry = _point(entry, f"{where}.entry_point")
        if not poly.contains(Point(entry)):
            raise ScenarioError(f"{where}.entry_point: must be inside the boundary")
    return ExitGate(eid, width, (a, b), entry, bool(raw.get("blocked", False)))


def _parse_cells(raw, poly: Polygon, source: str) -> tuple[tuple[Cell, ...], float]:
    where = f"{source}: cells"
    if not isinstance(raw, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    width = float(_require(raw, "cell_width", where))
    if width <= 0:
        raise ScenarioError(f"{where}.cell_width must be > 0")
    flat_top = str(raw.get("orientation", "pointy")) == "flat"
    if "centers" in raw:
        centers = [_point(c, f"{where}.centers[{i}]") for i, c in enumerate(raw["centers"])]
        cells = []
        for i, c in enumerate(centers):
            verts = hexagon_vertices(c, width, flat_top)
            area = Polygon(verts).intersection(poly).area
            cells.append(Cell(i + 1, c, tuple(map(tuple, verts)), float(area)))
    else:
        origin = _point(raw.get("origin", [0.0, 0.0]), f"{where}.origin")
        lattice = hex_lattice_centers(poly.bounds, width, origin, flat_top)
        kept = []
        for c in lattice:
            verts = hexagon_vertices(c, width, flat_top)
            area = Polygon(verts).intersection(poly).area
            if area > 1e-9:
                kept.append((round(c[1], 9), round(c[0], 9), verts, area))
        kept.sort(key=lambda k: (k[0], k[1]))
        cells = [
            Cell(i + 1, (float(k[1]), float(k[0])), tuple(map(tuple, k[2])), float(k[3]))
            for i, k in enumerate(kept)
        ]
    if not cells:
        raise ScenarioError(f"{where}: no cells cover the boundary")
    covered = sum(c.area for c in cells)
    if abs(covered - poly.area) > 1e-6 * max(1.0, poly.area):
        raise ScenarioError(
            f"{where}: cells must tile the walkable area without gaps or overlap "
            f"(cover {covered:.6g} m^2 of {poly.area:.6g} m^2)"
        )
    return tuple(cells), width


def _parse_flows(raw: dict, exits: tuple[ExitGate, ...], source: str) -> ExternalFlowSpec:
    where = f"{source}: external_flows"
    rate = float(raw.get("rate_peds_per_min", 0.0))
    if rate < 0:
        raise ScenarioError(f"{where}.rate_peds_per_min must be >= 0")
    n_in = int(raw.get("n_inflow", 0))
    n_bl = int(raw.get("n_blocked", 0))
    duration = float(raw.get("duration_s", 0.0))
    if duration < 0:
        raise ScenarioError(f"{where}.duration_s must be >= 0")
    with_entry = [e.id for e in exits if e.entry_point is not None]
    selection = raw.get("selection", "random")
    inflow_ids = blocked_ids = None
    if isinstance(selection, dict):
        inflow_ids = tuple(int(i) for i in selection.get("inflow", []))
        blocked_ids = tuple(int(i) for i in selection.get("blocked", []))
        n_in, n_bl = len(inflow_ids), len(blocked_ids)
        for i in inflow_ids:
            if i not in with_entry:
                raise ScenarioError(f"{where}.selection: inflow exit {i} has no entry_point")
        for i in blocked_ids:
            if not 1 <= i <= len(exits):
                raise ScenarioError(f"{where}.selection: unknown blocked exit {i}")
        if set(inflow_ids) & set(blocked_ids):
            raise ScenarioError(f"{where}.selection: an exit cannot be both inflow and blocked")
    elif selection != "random":
        raise ScenarioError(f"{where}.selection: expected 'random' or a mapping of fixed ids")
    if n_in < 0 or n_bl < 0:
        raise ScenarioError(f"{where}: n_inflow and n_blocked must be >= 0")
    if n_in > len(with_entry):
        raise ScenarioError(f"{where}: n_inflow={n_in} exceeds exits with an entry_point ({len(with_entry)})")
    if n_in + n_bl > len(exits):
        raise ScenarioError(f"{where}: n_inflow + n_blocked exceeds the number of exits")
    return ExternalFlowSpec(rate, n_in, n_bl, inflow_ids, blocked_ids, duration)


def wall_segments(boundary, gates) -> np.ndarray:
    """Split boundary edges around gate openings; returns ``(W, 4)`` segments."""
    pts = np.asarray(boundary, dtype=float)
    walls = []
    for k in range(len(pts)):
        p, q = pts[k], pts[(k + 1) % len(pts)]
        d = q - p
        length = float(np.hypot(*d))
        if length == 0:
            continue
        u = d / length
        cuts = []
        for ga, gb in gates:
            ga, gb = np.asarray(ga, float), np.asarray(gb, float)
            if point_segment_distance(ga, p, q) > 1e-6 or point_segment_distance(gb, p, q) > 1e-6:
                continue
            s0, s1 = sorted([(ga - p) @ u, (gb - p) @ u])
            cuts.append((max(s0, 0.0), min(s1, length)))
        cuts.sort()
        pos = 0.0
        for s0, s1 in cuts:
            if s0 - pos > 1e-9:
                walls.append([*(p + pos * u), *(p + s0 * u)])
            pos = max(pos, s1)
        if length - pos > 1e-9:
            walls.append([*(p + pos * u), *q])
    return np.asarray(walls, dtype=float).reshape(-1, 4)


# ---------------------------------------------------------------------------
# derived tables
# ---------------------------------------------------------------------------

def build_distance_table(scenario: Scenario) -> DistanceTable:
    centers = scenario.cell_centers
    table = np.column_stack([point_segment_distance(centers, e.a, e.b) for e in scenario.exits])
    max_d = float(table.max()) if table.size else 0.0
    return DistanceTable(table, max_d if max_d > 0 else 1.0)


def pedestrian_exit_distances(positions: np.ndarray, scenario: Scenario) -> np.ndarray:
    """``(N, E)`` distances from pedestrian positions to the nearest point of each gate."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    return np.column_stack([point_segment_distance(positions, e.a, e.b) for e in scenario.exits])


def locate_cells(points: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Vectorised cell lookup (0-based indices) for points known to be inside.

    For a regular hexagonal lattice the containing hexagon is the one with the
    nearest center; exact ties (shared edges) resolve to the lowest index.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)
    diff = pts[:, None, :] - scenario.cell_centers[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    dmin = d2.min(axis=1, keepdims=True)
    # argmax over a boolean mask returns the first (lowest id) tied cell
    return np.argmax(d2 <= dmin + 1e-9, axis=1)


def locate_cell(position, scenario: Scenario) -> int:
    """Id of the cell containing ``position``; raises ``ValueError`` outside the facility."""
    if not scenario.contains(position):
        raise ValueError(f"position {tuple(position)} lies outside the facility boundary")
    return int(locate_cells(np.asarray(position, dtype=float), scenario)[0]) + 1


def spawn_population(scenario: Scenario, seed: int):
    """Place the initial population at random, non-overlapping walkable positions.

    Returns a list of :class:`cellevac.motion.PedestrianState`. The result is a
    pure function of ``(scenario, seed)``.
    """
    from .motion import PedestrianState

    rng = np.random.default_rng(seed)
    positions = sample_free_positions(scenario, scenario.initial_population, rng)
    speeds = rng.uniform(*scenario.speed_range, size=len(positions))
    return [
        PedestrianState(id=i, position=positions[i].copy(), velocity=np.zeros(2), preferred_speed=float(speeds[i]))
        for i in range(len(positions))
    ]


def sample_free_positions(scenario: Scenario, n: int, rng: np.random.Generator,
                          separation: float = MIN_SEPARATION, max_attempts: int | None = None) -> np.ndarray:
    """Dart-throwing placement of ``n`` discs inside the boundary (inset by one body radius)."""
    if n == 0:
        return np.zeros((0, 2))
    inner = scenario.polygon.buffer(-BODY_RADIUS)
    if inner.is_empty:
        raise PlacementError("facility too small to hold a single pedestrian")
    xmin, ymin, xmax, ymax = inner.bounds
    cell = separation
    grid: dict[tuple[int, int], list[int]] = {}
    accepted = np.empty((n, 2))
    count = 0
    attempts = 0
    limit = max_attempts if max_attempts is not None else 200 * n + 10_000
    sep2 = separation * separation
    while count < n:
        if attempts >= limit:
            raise PlacementError(
                f"could only place {count} of {n} pedestrians with {separation} m separation"
            )
        batch = 1024
        xs = rng.uniform(xmin, xmax, batch)
        ys = rng.uniform(ymin, ymax, batch)
        inside = contains_xy(inner, xs, ys)
        for x, y, ok in zip(xs, ys, inside):
            attempts += 1
            if not ok:
                continue
            gx, gy = int(np.floor(x / cell)), int(np.floor(y / cell))
            clash = False
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for j in grid.get((gx + dx, gy + dy), ()):
                        px, py = accepted[j]
                        if (px - x) ** 2 + (py - y) ** 2 < sep2:
                            clash = True
                            break
                    if clash:
                        break
                if clash:
                    break
            if clash:
                continue
            accepted[count] = (x, y)
            grid.setdefault((gx, gy), []).append(count)
            count += 1
            if count == n:
                break
    return accepted
