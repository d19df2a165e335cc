"""Command-line entry point: ``cellevac <command> [options]``.

Every command accepts ``--scenario``, ``--seed``, ``--workers`` and
``--out-dir``; results are written as CSV and JSON under the output
directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import cgp
from .controller import OFF, ControllerConfig
from .fundamental_diagrams import (
    calibrate_exit,
    dynamics_for,
    save_dynamics,
)
from .harness import (
    SUITE_CONFIGS,
    BehaviorConfig,
    ExperimentSpec,
    ResultTable,
    compliance_sweep,
    configuration,
    default_workers,
    performance_suite,
    resolve_betas,
    run_many,
    sensitivity_sweep,
    write_run,
)
from .optimizer import ReplicationPolicy, TabuConfig, beta_objective, cgp_fitness_fn, tabu_search
from .scenario import load_scenario

log = logging.getLogger("cellevac")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _seeds(text: str) -> list[int]:
    """``"0-4"`` or ``"0,3,7"``."""
    if "-" in text.strip()[1:] and "," not in text:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def _add_common(p: argparse.ArgumentParser, suppress: bool = False) -> argparse.ArgumentParser:
    # global flags go before or after the subcommand; the subcommand copy only overrides when given
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--scenario", default=d("desk"), help="bundled name (desk, madrid_arena) or YAML path")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--workers", type=int, default=d(None), help="worker processes (default: $CELLEVAC_WORKERS or 1)")
    p.add_argument("--out-dir", default=d(Path("out")), type=Path)
    p.add_argument("--calibration", default=d(None), help="exit calibration JSON (default: bundled for the scenario)")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def _behavior_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--behavior", default="STANDARD", help="pedestrian betas: preset, JSON file or D,G,E,W,P")
    p.add_argument("--compliance", type=float, default=0.0, help="fraction following the controller")
    p.add_argument("--controller", choices=("off", "mlm", "cgp"), default="off")
    p.add_argument("--controller-betas", default="auto",
                   help="controller betas: preset, JSON file, list, or auto (scenario-tuned if bundled)")
    p.add_argument("--genotype", default=None, help="CGP genotype file (default: bundled reference rule)")
    p.add_argument("--no-flows", action="store_true", help="disable external inflows and blocking")


def build_parser() -> argparse.ArgumentParser:
    common = _add_common(argparse.ArgumentParser(add_help=False), suppress=True)
    parser = _add_common(argparse.ArgumentParser(prog="cellevac",
                                                 description="Crowd evacuation simulation and guidance experiments"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one or more evacuations")
    _behavior_args(p)
    p.add_argument("--runs", type=int, default=1, help="consecutive seeds starting at --seed")
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--trajectories", action="store_true", help="dump positions every 0.5 s to CSV")
    p.add_argument("--map-trace", action="store_true", help="dump controller cell maps to CSV")

    p = sub.add_parser("calibrate-fd", parents=[common], help="fundamental-diagram protocol and fit per exit")
    p.add_argument("--exit", default="all", help="exit id or 'all'")
    p.add_argument("--peak-flow", type=float, default=8.0, help="combined peak injection rate (peds/s)")
    p.add_argument("--curve", action="store_true", help="also write the fitted curve with its 90%% band")

    p = sub.add_parser("optimize", parents=[common], help="Tabu search over (D, G, E, W, P)")
    p.add_argument("--target", choices=("pedestrian", "controller"), default="controller")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--start", default=None, help="starting betas (default: box centre)")

    p = sub.add_parser("evolve-cgp", parents=[common], help="1+lambda evolution of a CGP controller rule")
    p.add_argument("--generations", type=int, default=100)
    p.add_argument("--lam", type=int, default=4)
    p.add_argument("--nodes", type=int, default=4000)
    p.add_argument("--mutation-rate", type=float, default=0.0075)
    p.add_argument("--smoke", action="store_true", help="constant-regression smoke problem instead of simulation")

    p = sub.add_parser("sweep", parents=[common], help="sensitivity (beta) or compliance sweep")
    p.add_argument("kind", choices=("beta", "compliance"))
    _behavior_args(p)
    p.add_argument("--parameter", default="beta_D", help="swept BetaConfig field (beta sweeps)")
    p.add_argument("--grid", required=True, help="comma-separated values (compliance as fractions)")
    p.add_argument("--seeds", default=None, help="base seeds, e.g. 0-4 (default: --seed)")
    p.add_argument("--runs", type=int, default=10, help="runs per level (compliance sweeps)")
    p.add_argument("--min-reps", type=int, default=3)
    p.add_argument("--max-reps", type=int, default=10)

    p = sub.add_parser("suite", parents=[common], help="performance comparison of STANDARD/OPTIMAL/CELLEVAC/CGP")
    p.add_argument("--configs", default=",".join(SUITE_CONFIGS))
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--controller-betas", default="auto")
    p.add_argument("--genotype", default=None)
    p.add_argument("--no-flows", action="store_true")
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _controller(args, scenario_name: str) -> ControllerConfig:
    if args.controller == "off":
        return OFF
    if args.controller == "mlm":
        return ControllerConfig("mlm", resolve_betas(args.controller_betas, scenario_name))
    genotype = cgp.load(args.genotype) if args.genotype else configuration("CGP")[1].genotype
    return ControllerConfig("cgp", genotype=genotype)


def cmd_simulate(args, scenario, dynamics) -> int:
    behavior = BehaviorConfig(resolve_betas(args.behavior, scenario.name), args.compliance)
    ctrl = _controller(args, scenario.name)
    seeds = list(range(args.seed, args.seed + args.runs))
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if args.trajectories or args.map_trace:
        results = []
        for s in seeds:
            results.append(run_many(scenario, behavior, ctrl, [s], dynamics, 1, dt=args.dt, flows=not args.no_flows,
                                    trajectory_path=out / f"trajectory_seed{s}.csv" if args.trajectories else None,
                                    map_trace_path=out / f"map_seed{s}.csv" if args.map_trace else None)[0])
    else:
        results = run_many(scenario, behavior, ctrl, seeds, dynamics, args.workers, dt=args.dt,
                           flows=not args.no_flows)
    for r in results:
        write_run(r, scenario, dynamics, out, f"run_seed{r.seed}")
        print(f"seed {r.seed}: evac_time {r.evac_time:.2f} min, Sf {r.safety.Sf:.2f}, "
              f"decision changes {r.decision_mean:.3f}, remaining {r.remaining_peds}")
    return 0


def _calibrate_job(a):
    scenario, exit_id, peak, seed = a
    return exit_id, calibrate_exit(scenario, exit_id, peak, seed)


def cmd_calibrate(args, scenario) -> int:
    ids = list(range(1, scenario.n_exits + 1)) if args.exit == "all" else [int(args.exit)]
    workers = args.workers if args.workers is not None else default_workers()
    jobs = [(scenario, j, args.peak_flow, args.seed) for j in ids]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_calibrate_job, jobs))
    else:
        done = [_calibrate_job(j) for j in jobs]
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dyns = []
    for exit_id, (samples, fit, dyn) in done:
        dyns.append(dyn)
        with open(out / f"fd_samples_exit{exit_id}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "density", "flow", "locked"])
            for t, d, f, m in zip(samples.time, samples.density, samples.flow, samples.lock_mask):
                w.writerow([f"{t:.2f}", repr(float(d)), repr(float(f)), int(m)])
        if args.curve:
            lo, hi = fit.domain
            x = np.linspace(lo, hi, 200)
            y = fit(x)
            blo, bhi = fit.band(x, 0.90)
            with open(out / f"fd_curve_exit{exit_id}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["density", "flow", "lower90", "upper90"])
                for row in zip(x, y, blo, bhi):
                    w.writerow([repr(float(v)) for v in row])
        print(f"exit {exit_id}: rho_crit {dyn.rho_crit:.3f} rho_sf {dyn.rho_sf:.3f} "
              f"rho_over {dyn.rho_over:.3f} rho_lock {dyn.rho_lock:.3f}")
    path = out / f"{scenario.name}_fd.json"
    save_dynamics(path, scenario.name, dyns, {"seed": args.seed, "peak_flow": args.peak_flow})
    print(f"calibration written to {path}")
    return 0


def cmd_optimize(args, scenario, dynamics) -> int:
    workers = args.workers if args.workers is not None else default_workers()
    objective = beta_objective(scenario, args.target, ReplicationPolicy(controlled_output="fitness"),
                               seed=args.seed, dynamics=dynamics, workers=workers)
    start = None if args.start is None else resolve_betas(args.start, scenario.name).as_array()[:5]
    result = tabu_search(objective, TabuConfig(iterations=args.iterations, start=start, seed=args.seed))
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "optimize_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "beta_D", "beta_G", "beta_E", "beta_W", "beta_P", "n_reps", "fitness",
                    "viable", "best_so_far"])
        for r in result.trace:
            w.writerow([r.iteration, *[repr(v) for v in r.x], r.n_reps, repr(r.fitness), int(r.viable),
                        repr(r.best_so_far)])
    best = {"target": args.target, "scenario": scenario.name, "exhausted": result.exhausted}
    if result.best is not None:
        from .behavior import BetaConfig
        best.update(betas=BetaConfig.from_array(result.best.x).to_dict(), fitness=result.best.fitness,
                    n_reps=result.best.n_reps, raw=result.best.raw)
    (out / "optimize_best.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    if result.exhausted:
        print("no viable candidate found; see optimize_trace.csv")
        return 2
    print(f"best fitness {result.best.fitness:.4f} at {best['betas']}")
    return 0


SMOKE_INPUTS = (0.5, 1.0, 1.5, 2.0, 2.5)
SMOKE_TARGET = 7.0


def smoke_fitness(g) -> float:
    """Distance of the rule's output on fixed inputs to the constant 7."""
    return abs(float(cgp.evaluate(g, SMOKE_INPUTS)) - SMOKE_TARGET)


def cmd_evolve(args, scenario, dynamics) -> int:
    cfg = cgp.EvolutionConfig(generations=args.generations, lam=args.lam, mutation_rate=args.mutation_rate,
                              n_nodes=args.nodes, seed=args.seed, target_fitness=1e-6 if args.smoke else None)
    fn = smoke_fitness if args.smoke else cgp_fitness_fn(scenario, seed=args.seed, dynamics=dynamics)
    result = cgp.evolve_one_plus_lambda(fn, cfg)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    cgp.save(result.best, out / "best.cgp")
    with open(out / "evolve_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_fitness"])
        for i, f in enumerate(result.history):
            w.writerow([i, repr(float(f))])
    print(f"best fitness {result.best_fitness:.6g} after {len(result.history)} generations; "
          f"rule: {cgp.to_sexpr(result.best)}")
    return 0


def cmd_sweep(args, scenario, dynamics) -> int:
    seeds = tuple(_seeds(args.seeds)) if args.seeds else (args.seed,)
    grid = tuple(_floats(args.grid))
    common = dict(scenario=args.scenario, seeds=seeds, behavior=args.behavior, controller=args.controller,
                  controller_betas=args.controller_betas, compliance=args.compliance, flows=not args.no_flows)
    if args.kind == "beta":
        spec = ExperimentSpec(kind="sensitivity", parameter=args.parameter, grid=grid,
                              policy=ReplicationPolicy(args.min_reps, args.max_reps), **common)
        table = sensitivity_sweep(spec, scenario, dynamics, args.workers)
        name = f"sweep_{args.parameter}"
    else:
        if args.controller == "off":
            common["controller"] = "mlm"
        spec = ExperimentSpec(kind="compliance", parameter="compliance", grid=grid, runs=args.runs, **common)
        table = compliance_sweep(spec, scenario, dynamics, args.workers)
        name = "sweep_compliance"
    _report(table, args.out_dir, name)
    return 0


def cmd_suite(args, scenario, dynamics) -> int:
    spec = ExperimentSpec(kind="performance", scenario=args.scenario, runs=args.runs, seeds=(args.seed,),
                          flows=not args.no_flows, controller_betas=args.controller_betas)
    ctrl_betas = resolve_betas(args.controller_betas, scenario.name)
    genotype = cgp.load(args.genotype) if args.genotype else None
    table = ResultTable(spec)
    for name in [c.strip().upper() for c in args.configs.split(",") if c.strip()]:
        behavior, ctrl = configuration(name, ctrl_betas, genotype)
        sub = performance_suite(spec, scenario, dynamics, args.workers, behavior, ctrl, point=name)
        for r in sub.rows:
            r["run_id"] = len(table.rows)
            table.rows.append(r)
        table.summary.extend(sub.summary)
    _report(table, args.out_dir, "suite")
    return 0


def _report(table: ResultTable, out_dir, name: str) -> None:
    csv_path, manifest = table.write(out_dir, name)
    for s in table.summary:
        print(f"{s['point']}: evac_time median {s['evac_time']['median']:.3f} min, "
              f"Sf median {s['Sf']['median']:.2f}, decision changes median {s['decision_mean']['median']:.3f}")
    print(f"results: {csv_path} (manifest {manifest})")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None:
        args.workers = default_workers()
    scenario = load_scenario(args.scenario)
    if args.command == "calibrate-fd":
        return cmd_calibrate(args, scenario)
    if args.command == "evolve-cgp" and args.smoke:
        return cmd_evolve(args, scenario, None)
    dynamics = dynamics_for(scenario, args.calibration)
    handlers = {"simulate": cmd_simulate, "optimize": cmd_optimize, "evolve-cgp": cmd_evolve,
                "sweep": cmd_sweep, "suite": cmd_suite}
    return handlers[args.command](args, scenario, dynamics)


if __name__ == "__main__":
    sys.exit(main())
