"""Experiment orchestration: single runs, sweeps, suites and result export.

A run spawns the population, then advances the social-force model at a fixed
step while, on a fixed schedule, the controller allocates and broadcasts its
cell map, pedestrians re-decide (every 5 s), densities and flows are sampled
(every 2 s) and external flows are injected. It stops when the facility is
empty and no more arrivals are due, or at the time cap.

Random streams (spawn, decisions, inflow, compliance, exit selection) are
independent children of the run seed, so changing e.g. the compliance rate
never perturbs the other streams.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cgp
from .behavior import PRESETS, BetaConfig, decision_cycle
from .controller import OFF, ControllerConfig, ControllerMap, allocate, broadcast
from .fundamental_diagrams import dynamics_for
from .motion import (
    DEFAULT_PARAMS,
    MeasurementAreas,
    SimState,
    block_exit,
    cell_counts,
    exit_densities,
    inject_external_flow,
    measure,
    sfm_step,
)
from .optimizer import ReplicationPolicy, replicate
from .safety import SafetyReport, running_safety, safety_report
from .scenario import Scenario, build_distance_table, spawn_population

SAMPLE_PERIOD = 2.0
DECISION_PERIOD = 5.0
WORKERS_ENV = "CELLEVAC_WORKERS"
METRICS = ("evac_time", "Sf", "Sf_var", "decision_mean", "remaining_peds")


def scenario_presets_path(scenario_name: str) -> Path:
    from importlib import resources
    return Path(str(resources.files("cellevac") / "data" / f"{scenario_name}_presets.json"))


def resolve_betas(spec, scenario_name: str | None = None) -> BetaConfig:
    """Coefficients from a preset name, a scenario-specific bundled preset,
    a JSON file (``{"betas": {...}}`` or a flat mapping) or ``"D,G,E,W,P[,SYS]"``.
    ``"auto"`` picks the scenario's tuned controller preset when one is bundled."""
    if isinstance(spec, BetaConfig):
        return spec
    text = str(spec).strip()
    if text.lower() == "auto":
        return default_controller_betas(scenario_name)
    if text.upper() in PRESETS:
        return PRESETS[text.upper()]
    if scenario_name is not None:
        p = scenario_presets_path(scenario_name)
        if p.exists():
            raw = json.loads(p.read_text())
            for name, betas in raw.get("presets", {}).items():
                if name.upper() == text.upper():
                    return BetaConfig.from_dict(betas)
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        raw = json.loads(path.read_text())
        return BetaConfig.from_dict(raw.get("betas", raw))
    try:
        return BetaConfig.from_array([float(v) for v in text.split(",")])
    except ValueError:
        raise KeyError(f"cannot resolve betas {spec!r}: not a preset, JSON file or coefficient list") from None


def default_controller_betas(scenario_name: str | None) -> BetaConfig:
    """The scenario's own tuned controller (preset ``CELLEVAC_<NAME>``) if bundled, else CELLEVAC."""
    if scenario_name is not None:
        p = scenario_presets_path(scenario_name)
        if p.exists():
            presets = json.loads(p.read_text()).get("presets", {})
            key = f"CELLEVAC_{scenario_name.upper()}"
            if key in presets:
                return BetaConfig.from_dict(presets[key])
    return PRESETS["CELLEVAC"]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class BehaviorConfig:
    betas: BetaConfig = PRESETS["STANDARD"]
    compliance_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.compliance_rate <= 1.0:
            raise ValueError("compliance_rate must lie in [0, 1]")


@dataclass
class RunResult:
    seed: int
    fingerprint: str
    evac_time: float              # minutes (the cap when not everyone got out)
    completed: bool
    times: np.ndarray             # (T,) seconds
    density: np.ndarray           # (T, E)
    flow: np.ndarray              # (T, E)
    safety: SafetyReport
    exit_counts: np.ndarray       # (E,)
    decision_hist: np.ndarray     # decision_hist[k] = pedestrians with k changes
    decision_mean: float
    remaining_peds: int
    spawned: int
    injected: int
    inflow_exits: tuple[int, ...] = ()
    blocked_exits: tuple[int, ...] = ()
    n_decision_cycles: int = 0
    conservation_ok: bool = True

    def metrics(self) -> dict[str, float]:
        return {
            "evac_time": float(self.evac_time),
            "Sf": float(self.safety.Sf),
            "Sf_var": float(self.safety.Sf_var),
            "decision_mean": float(self.decision_mean),
            "remaining_peds": float(self.remaining_peds),
        }

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "evac_time": self.evac_time,
            "completed": self.completed,
            "times": self.times.tolist(),
            "density": self.density.tolist(),
            "flow": self.flow.tolist(),
            "safety": self.safety.to_dict(),
            "exit_counts": self.exit_counts.tolist(),
            "decision_hist": self.decision_hist.tolist(),
            "decision_mean": self.decision_mean,
            "remaining_peds": self.remaining_peds,
            "spawned": self.spawned,
            "injected": self.injected,
            "inflow_exits": list(self.inflow_exits),
            "blocked_exits": list(self.blocked_exits),
            "n_decision_cycles": self.n_decision_cycles,
            "conservation_ok": self.conservation_ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------

def fingerprint(scenario: Scenario, behavior: BehaviorConfig, controller: ControllerConfig,
                dt: float, flows: bool) -> str:
    ctrl = {"mode": controller.mode, "period": controller.period}
    if controller.betas is not None:
        ctrl["betas"] = controller.betas.to_dict()
    if controller.genotype is not None:
        ctrl["genotype"] = hashlib.sha256(cgp.to_text(controller.genotype).encode()).hexdigest()
    blob = json.dumps({
        "scenario": {"name": scenario.name, "repr": hashlib.sha256(repr(scenario).encode()).hexdigest()},
        "behavior": {"betas": behavior.betas.to_dict(), "compliance": behavior.compliance_rate},
        "controller": ctrl,
        "dt": dt,
        "flows": flows,
        "sfm": DEFAULT_PARAMS.__dict__,
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def select_flow_exits(scenario: Scenario, rng: np.random.Generator) -> tuple[tuple[int, ...], tuple[int, ...]]:
    spec = scenario.external_flows
    if not spec.random_selection:
        return tuple(spec.inflow_ids), tuple(spec.blocked_ids)
    with_entry = [g.id for g in scenario.exits if g.entry_point is not None]
    inflow = sorted(int(i) for i in rng.choice(with_entry, spec.n_inflow, replace=False)) if spec.n_inflow else []
    rest = [g.id for g in scenario.exits if g.id not in inflow]
    blocked = sorted(int(i) for i in rng.choice(rest, spec.n_blocked, replace=False)) if spec.n_blocked else []
    return tuple(inflow), tuple(blocked)


def _steps(period: float, dt: float) -> int:
    n = int(round(period / dt))
    if n < 1 or abs(n * dt - period) > 1e-9:
        raise ValueError(f"period {period} s is not a multiple of dt={dt}")
    return n


def run_simulation(scenario: Scenario, behavior: BehaviorConfig = BehaviorConfig(),
                   controller: ControllerConfig = OFF, seed: int = 0, dynamics=None,
                   dt: float = 0.05, flows: bool = True, trajectory_path=None,
                   trajectory_every: int = 10, map_trace_path=None) -> RunResult:
    """Simulate one evacuation and summarize it."""
    if dynamics is None:
        dynamics = dynamics_for(scenario)
    if len(dynamics) != scenario.n_exits:
        raise ValueError("exit calibration does not match the scenario")
    crit = np.array([d.rho_crit for d in dynamics])
    table = build_distance_table(scenario)
    areas = MeasurementAreas(scenario)

    ss = np.random.SeedSequence(seed)
    spawn_ss, dec_ss, inflow_ss, comp_ss, sel_ss = ss.spawn(5)
    dec_rng = np.random.default_rng(dec_ss)
    inflow_rng = np.random.default_rng(inflow_ss)
    comp_rng = np.random.default_rng(comp_ss)
    sel_rng = np.random.default_rng(sel_ss)

    pop = spawn_population(scenario, int(spawn_ss.generate_state(1)[0]))
    state = SimState.from_population(pop, scenario)
    n0 = len(pop)
    if n0:
        state.compliant[:] = comp_rng.random(n0) < behavior.compliance_rate

    flow_spec = scenario.external_flows
    use_flows = flows and (flow_spec.n_inflow > 0 or flow_spec.n_blocked > 0)
    inflow, blocked = select_flow_exits(scenario, sel_rng) if use_flows else ((), ())
    state.blocked[:] = False
    for j in blocked:
        block_exit(state, j)
    rate = flow_spec.rate_peds_per_min if use_flows else 0.0
    inflow_end = flow_spec.duration_s if rate > 0 else 0.0

    decision_every = _steps(DECISION_PERIOD, dt)
    sample_every = _steps(SAMPLE_PERIOD, dt)
    control_every = _steps(controller.period, dt) if controller.active else 0
    cap_steps = int(round(scenario.sim_time_cap / dt))

    times, dens, flws = [], [], []
    cmap: ControllerMap | None = None
    counts = densities = None
    n_cycles = 0
    conserved = True

    traj = _open_csv(trajectory_path, ["t", "ped_id", "x", "y", "target"])
    mtrace = _open_csv(map_trace_path, ["t", "cell", "exit"])

    try:
        k = 0
        while k < cap_steps:
            t = k * dt
            pending = rate > 0 and (t < inflow_end or any(state.backlog.values()))
            if state.n_active == 0 and not pending:
                break
            if k % sample_every == 0:
                _sample(state, scenario, areas, times, dens, flws)
                conserved &= state.conserved()
            if k % decision_every == 0 or (control_every and k % control_every == 0):
                counts = cell_counts(state, scenario)
                densities = exit_densities(state, scenario, areas, counts)
                if control_every and k % control_every == 0:
                    cmap = allocate(controller, state, scenario, table, dynamics, cmap, counts, densities)
                    broadcast(cmap, state, scenario)
                    if mtrace is not None:
                        for c, e in enumerate(cmap.assignment):
                            mtrace[1].writerow([f"{t:.2f}", c + 1, int(e)])
                if k % decision_every == 0:
                    decision_cycle(state, scenario, table, crit, behavior.betas, dec_rng,
                                   densities=densities, counts=counts, n_initial=n0)
                    n_cycles += 1
            if rate > 0 and (t < inflow_end or pending):
                step_rate = rate if t < inflow_end else 0.0
                for j in inflow:
                    rows = inject_external_flow(state, scenario, j, step_rate, dt, inflow_rng,
                                                compliance=behavior.compliance_rate, compliance_rng=comp_rng)
                    if len(rows):
                        # arrivals choose at once, using the latest cycle's attributes
                        if cmap is not None:
                            broadcast(cmap, state, scenario, rows=rows)
                        decision_cycle(state, scenario, table, crit, behavior.betas, dec_rng, rows=rows,
                                       densities=densities, counts=counts, n_initial=n0)
            if traj is not None and k % trajectory_every == 0:
                for i in state.active_indices():
                    traj[1].writerow([f"{t:.2f}", i, f"{state.pos[i, 0]:.3f}", f"{state.pos[i, 1]:.3f}",
                                      int(state.target[i])])
            sfm_step(state, scenario, dt)
            k += 1
        # close the last (possibly partial) sampling interval
        if k % sample_every != 0 or state.crossings.any():
            _sample(state, scenario, areas, times, dens, flws)
        conserved &= state.conserved()
    finally:
        for h in (traj, mtrace):
            if h is not None:
                h[0].close()

    if not conserved:
        raise RuntimeError(f"conservation violated in run seed={seed}")
    completed = state.n_active == 0 and not any(state.backlog.values())
    evac_s = state.clock if completed else scenario.sim_time_cap
    e = scenario.n_exits
    density = np.asarray(dens, dtype=float).reshape(-1, e)
    flow = np.asarray(flws, dtype=float).reshape(-1, e)
    hist = np.bincount(state.changes, minlength=1) if state.n_rows else np.zeros(1, dtype=np.int64)
    return RunResult(
        seed=int(seed),
        fingerprint=fingerprint(scenario, behavior, controller, dt, flows),
        evac_time=float(evac_s / 60.0),
        completed=bool(completed),
        times=np.asarray(times, dtype=float),
        density=density,
        flow=flow,
        safety=safety_report(density, dynamics),
        exit_counts=state.evac_counts.copy(),
        decision_hist=hist,
        decision_mean=float(state.changes.mean()) if state.n_rows else 0.0,
        remaining_peds=int(state.n_active),
        spawned=int(state.spawned),
        injected=int(state.n_injected),
        inflow_exits=tuple(inflow),
        blocked_exits=tuple(blocked),
        n_decision_cycles=n_cycles,
        conservation_ok=bool(conserved),
    )


def _sample(state, scenario, areas, times, dens, flws):
    samples = measure(state, scenario, SAMPLE_PERIOD, areas)
    times.append(state.clock)
    dens.append([s.density for s in samples])
    flws.append([s.flow for s in samples])


def _open_csv(path, header):
    if path is None:
        return None
    fh = open(path, "w", newline="")
    w = csv.writer(fh)
    w.writerow(header)
    return fh, w


def _run_job(args):
    scenario, behavior, controller, seed, dynamics, kwargs = args
    return run_simulation(scenario, behavior, controller, seed, dynamics, **kwargs)


def run_many(scenario: Scenario, behavior: BehaviorConfig, controller: ControllerConfig,
             seeds: Sequence[int], dynamics=None, workers: int | None = None, **kwargs) -> list[RunResult]:
    """Independent runs, returned in seed order regardless of worker count."""
    if dynamics is None:
        dynamics = dynamics_for(scenario)
    workers = default_workers() if workers is None else workers
    jobs = [(scenario, behavior, controller, int(s), dynamics, kwargs) for s in seeds]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    kind: str = "single"                 # single | sensitivity | performance | compliance | optimize | calibrate
    scenario: str = "desk"
    parameter: str | None = None         # swept BetaConfig field or "compliance"
    grid: tuple = ()
    runs: int = 1
    seeds: tuple[int, ...] = (0,)
    behavior: str = "STANDARD"
    beta_overrides: dict = field(default_factory=dict)
    controller: str = "off"
    controller_betas: str = "auto"
    compliance: float = 0.0
    flows: bool = True
    policy: ReplicationPolicy = field(default_factory=ReplicationPolicy)
    dt: float = 0.05

    def __post_init__(self):
        kinds = ("single", "sensitivity", "performance", "compliance", "optimize", "calibrate")
        if self.kind not in kinds:
            raise ValueError(f"kind must be one of {kinds}")
        if self.kind in ("sensitivity", "compliance") and len(self.grid) == 0:
            raise ValueError("grid must be non-empty")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if len(self.seeds) == 0:
            raise ValueError("need at least one seed")

    def base_betas(self) -> BetaConfig:
        return resolve_betas(self.behavior, Path(self.scenario).stem).replace(**self.beta_overrides)

    def controller_config(self) -> ControllerConfig:
        if self.controller == "off":
            return OFF
        if self.controller == "mlm":
            return ControllerConfig("mlm", resolve_betas(self.controller_betas, Path(self.scenario).stem))
        raise ValueError("suite specs support controller 'off' or 'mlm'; use the CLI for cgp genotypes")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["policy"] = dict(self.policy.__dict__)
        d["grid"] = list(self.grid)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class ResultTable:
    """Per-run rows ``{point, seed, run_id, metrics...}`` plus per-point summaries."""

    spec: ExperimentSpec
    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)

    def points(self) -> list:
        seen = []
        for r in self.rows:
            if r["point"] not in seen:
                seen.append(r["point"])
        return seen

    def column(self, point, metric: str) -> np.ndarray:
        return np.array([r[metric] for r in self.rows if r["point"] == point], dtype=float)

    def summary_for(self, point) -> dict:
        for s in self.summary:
            if s["point"] == point:
                return s
        raise KeyError(point)

    def write(self, out_dir, name: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{name}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run_id", "point", "seed", "fingerprint", "metric", "value"])
            for r in self.rows:
                for m in METRICS + ("n_reps",):
                    if m in r:
                        w.writerow([r["run_id"], r["point"], r["seed"], r.get("fingerprint", ""), m, repr(r[m])])
        manifest = out / f"{name}.json"
        manifest.write_text(json.dumps({"spec": self.spec.to_dict(), "summary": self.summary},
                                       indent=2, sort_keys=True, default=_json_default) + "\n")
        return csv_path, manifest


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _quantiles(values) -> dict:
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "mean": float(v.mean())}


def _scenario_of(spec: ExperimentSpec, scenario):
    from .scenario import load_scenario
    return scenario if scenario is not None else load_scenario(spec.scenario)


def _replicate_job(args):
    scenario, behavior, ctrl, base_seed, dynamics, policy, kwargs = args

    def once(s):
        return run_simulation(scenario, behavior, ctrl, s, dynamics, **kwargs)

    return replicate(once, policy, base_seed, key=lambda r: r.evac_time)


def sensitivity_sweep(spec: ExperimentSpec, scenario: Scenario | None = None, dynamics=None,
                      workers: int | None = None) -> ResultTable:
    """For each grid value and base seed, replicate the run (evac_time-controlled)."""
    scenario = _scenario_of(spec, scenario)
    dynamics = dynamics if dynamics is not None else dynamics_for(scenario)
    base = spec.base_betas()
    ctrl = spec.controller_config()
    kwargs = {"dt": spec.dt, "flows": spec.flows}
    jobs, labels = [], []
    for value in spec.grid:
        if spec.parameter == "compliance":
            behavior = BehaviorConfig(base, float(value))
        else:
            behavior = BehaviorConfig(base.replace(**{spec.parameter: float(value)}), spec.compliance)
        for s in spec.seeds:
            jobs.append((scenario, behavior, ctrl, int(s), dynamics, spec.policy, kwargs))
            labels.append((value, int(s)))
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            stats_list = list(pool.map(_replicate_job, jobs))
    else:
        stats_list = [_replicate_job(j) for j in jobs]

    table = ResultTable(spec)
    per_point: dict = {}
    for (value, base_seed), st in zip(labels, stats_list):
        means = {m: float(np.mean([r.metrics()[m] for r in st.outputs])) for m in METRICS}
        row = {"run_id": len(table.rows), "point": value, "seed": base_seed, "n_reps": st.n,
               "fingerprint": st.outputs[0].fingerprint if st.outputs else "", **means}
        table.rows.append(row)
        per_point.setdefault(value, []).append(row)
    for value in spec.grid:
        rows = per_point[value]
        table.summary.append({"point": value, "n_seeds": len(rows),
                              **{m: _quantiles([r[m] for r in rows]) for m in METRICS}})
    return table


def performance_suite(spec: ExperimentSpec, scenario: Scenario | None = None, dynamics=None,
                      workers: int | None = None, behavior: BehaviorConfig | None = None,
                      controller: ControllerConfig | None = None, point=None) -> ResultTable:
    """``spec.runs`` independent seeded runs of one configuration."""
    scenario = _scenario_of(spec, scenario)
    dynamics = dynamics if dynamics is not None else dynamics_for(scenario)
    behavior = behavior or BehaviorConfig(spec.base_betas(), spec.compliance)
    controller = controller or spec.controller_config()
    seeds = suite_seeds(spec)
    runs = run_many(scenario, behavior, controller, seeds, dynamics, workers,
                    dt=spec.dt, flows=spec.flows)
    table = ResultTable(spec)
    label = point if point is not None else spec.behavior
    for i, r in enumerate(runs):
        table.rows.append({"run_id": i, "point": label, "seed": r.seed, "fingerprint": r.fingerprint,
                           **r.metrics()})
    table.summary.append({"point": label, "n_runs": len(runs),
                          **{m: _quantiles([r.metrics()[m] for r in runs]) for m in METRICS}})
    return table


SUITE_CONFIGS = ("STANDARD", "OPTIMAL", "CELLEVAC", "CGP")


def configuration(name: str, controller_betas: BetaConfig | None = None,
                  genotype=None) -> tuple[BehaviorConfig, ControllerConfig]:
    """The four compared set-ups: individual STANDARD / OPTIMAL behaviour without
    guidance, and everyone following the MLM (CELLEVAC) or CGP controller."""
    name = name.upper()
    if name in ("STANDARD", "OPTIMAL"):
        return BehaviorConfig(PRESETS[name], 0.0), OFF
    if name == "CELLEVAC":
        return BehaviorConfig(PRESETS["STANDARD"], 1.0), ControllerConfig("mlm", controller_betas or PRESETS["CELLEVAC"])
    if name == "CGP":
        if genotype is None:
            genotype = cgp.load(reference_rule_path())
        return BehaviorConfig(PRESETS["STANDARD"], 1.0), ControllerConfig("cgp", genotype=genotype)
    raise KeyError(f"unknown configuration {name!r}; choose from {SUITE_CONFIGS}")


def reference_rule_path() -> Path:
    from importlib import resources
    return Path(str(resources.files("cellevac") / "data" / "reference_rule.cgp"))


def suite_seeds(spec: ExperimentSpec) -> list[int]:
    if len(spec.seeds) >= spec.runs:
        return [int(s) for s in spec.seeds[: spec.runs]]
    start = int(spec.seeds[0])
    return list(range(start, start + spec.runs))


def compliance_sweep(spec: ExperimentSpec, scenario: Scenario | None = None, dynamics=None,
                     workers: int | None = None) -> ResultTable:
    """The given fraction follows the controller; everyone else behaves per ``spec.behavior``."""
    scenario = _scenario_of(spec, scenario)
    dynamics = dynamics if dynamics is not None else dynamics_for(scenario)
    if spec.controller == "off":
        spec = ExperimentSpec(**{**spec.__dict__, "controller": "mlm"})
    table = ResultTable(spec)
    for level in spec.grid:
        sub = performance_suite(spec, scenario, dynamics, workers,
                                BehaviorConfig(spec.base_betas(), float(level)), point=level)
        for r in sub.rows:
            r["run_id"] = len(table.rows)
            table.rows.append(r)
        table.summary.extend(sub.summary)
    return table


# ---------------------------------------------------------------------------
# per-run export
# ---------------------------------------------------------------------------

def write_run(result: RunResult, scenario: Scenario, dynamics, out_dir, name: str = "run") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    summary = out / f"{name}.json"
    d = result.to_dict()
    for k in ("times", "density", "flow"):
        d.pop(k)
    summary.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    paths.append(summary)

    series = out / f"{name}_series.csv"
    with open(series, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "exit", "density", "flow"])
        for i, t in enumerate(result.times):
            for j in range(scenario.n_exits):
                w.writerow([f"{t:.2f}", j + 1, repr(float(result.density[i, j])), repr(float(result.flow[i, j]))])
    paths.append(series)

    safety = out / f"{name}_safety.csv"
    from .safety import normalize_density
    with open(safety, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "exit", "density", "normalized_density", "running_Sf_j"])
        for j in range(scenario.n_exits):
            col = result.density[:, j] if len(result.times) else np.zeros(0)
            if len(col) == 0:
                continue
            norm = np.atleast_1d(normalize_density(col, dynamics[j].rho_sf, dynamics[j].rho_lock))
            run = running_safety(col, dynamics[j], result.safety.gamma)
            for i, t in enumerate(result.times):
                w.writerow([f"{t:.2f}", j + 1, repr(float(col[i])), repr(float(norm[i])), repr(float(run[i]))])
    paths.append(safety)
    safety_json = out / f"{name}_safety.json"
    safety_json.write_text(json.dumps(result.safety.to_dict(), indent=2, sort_keys=True) + "\n")
    paths.append(safety_json)
    return paths

