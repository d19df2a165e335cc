import csv
import json

import pytest
import yaml

from cellevac.cli import build_parser, main
from cellevac.fundamental_diagrams import ExitDynamics, save_dynamics


ROOM = {
    "name": "room",
    "boundary": [[0, 0], [12, 0], [12, 6], [0, 6]],
    "exits": [
        {"id": 1, "width": 2.0, "segment": [[12, 2], [12, 4]], "entry_point": [10.5, 3.0]},
        {"id": 2, "width": 1.0, "segment": [[0, 2.5], [0, 3.5]], "entry_point": [1.5, 3.0]},
    ],
    "cells": {"cell_width": 3.0, "orientation": "pointy", "origin": [1.5, 1.5]},
    "population": {"count": 30, "speed_min": 1.24, "speed_max": 1.48},
    "external_flows": {"rate_peds_per_min": 12.0, "duration_s": 20.0, "selection": {"inflow": [2], "blocked": []}},
    "limits": {"sim_time_cap_s": 120.0},
}


@pytest.fixture
def room(tmp_path):
    """A small YAML scenario plus its own calibration file."""
    scen = tmp_path / "room.yaml"
    scen.write_text(yaml.safe_dump(ROOM))
    cal = tmp_path / "room_fd.json"
    save_dynamics(cal, "room", [ExitDynamics(1, 2.0, (0.0,) * 7, 2.0, 2.8, 3.5, 2.08),
                                ExitDynamics(2, 1.0, (0.0,) * 7, 2.0, 2.8, 3.5, 2.08)])
    return ["--scenario", str(scen), "--calibration", str(cal)]


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate(tmp_path, capsys):
    assert main(["simulate", "--seed", "2", "--runs", "2", "--out-dir", str(tmp_path),
                 "--controller", "mlm", "--compliance", "1", "--map-trace"]) == 0
    for s in (2, 3):
        d = json.loads((tmp_path / f"run_seed{s}.json").read_text())
        assert d["seed"] == s and d["conservation_ok"]
        assert rows(tmp_path / f"run_seed{s}_series.csv")
        assert rows(tmp_path / f"map_seed{s}.csv")
    assert "seed 3: evac_time" in capsys.readouterr().out


def test_simulate_trajectories(tmp_path):
    assert main(["simulate", "--out-dir", str(tmp_path), "--trajectories", "--no-flows"]) == 0
    traj = rows(tmp_path / "trajectory_seed0.csv")
    assert traj[0].keys() == {"t", "ped_id", "x", "y", "target"}


def test_calibrate_one_exit(tmp_path):
    assert main(["calibrate-fd", "--exit", "2", "--peak-flow", "6", "--curve", "--out-dir", str(tmp_path)]) == 0
    cal = json.loads((tmp_path / "desk_fd.json").read_text())
    (ex,) = cal["exits"]
    assert ex["rho_crit"] < ex["rho_sf"] < ex["rho_over"] < ex["rho_lock"]
    assert len(rows(tmp_path / "fd_curve_exit2.csv")) == 200
    assert rows(tmp_path / "fd_samples_exit2.csv")


def test_optimize(tmp_path, room):
    assert main(["optimize", *room, "--iterations", "2", "--out-dir", str(tmp_path)]) == 0
    trace = rows(tmp_path / "optimize_trace.csv")
    assert len(trace) == 2
    best = json.loads((tmp_path / "optimize_best.json").read_text())
    assert set(best["betas"]) >= {"beta_D", "beta_P"}


def test_evolve_smoke(tmp_path):
    assert main(["evolve-cgp", "--smoke", "--nodes", "50", "--mutation-rate", "0.05",
                 "--generations", "5000", "--out-dir", str(tmp_path)]) == 0
    hist = rows(tmp_path / "evolve_history.csv")
    assert float(hist[-1]["best_fitness"]) < 1e-6
    assert (tmp_path / "best.cgp").exists()


def test_evolve_on_simulation(tmp_path, room):
    assert main(["evolve-cgp", *room, "--generations", "1", "--lam", "1", "--nodes", "30",
                 "--out-dir", str(tmp_path)]) == 0
    assert len(rows(tmp_path / "evolve_history.csv")) >= 1


def test_sweep_beta(tmp_path):
    assert main(["sweep", "beta", "--parameter", "beta_P", "--grid", "0,15", "--seeds", "0-1",
                 "--min-reps", "1", "--max-reps", "1", "--no-flows", "--out-dir", str(tmp_path)]) == 0
    out = rows(tmp_path / "sweep_beta_P.csv")
    assert {r["point"] for r in out} == {"0.0", "15.0"}
    manifest = json.loads((tmp_path / "sweep_beta_P.json").read_text())
    assert manifest["spec"]["grid"] == [0.0, 15.0]


def test_sweep_compliance(tmp_path):
    assert main(["sweep", "compliance", "--grid", "0,1", "--runs", "1", "--out-dir", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "sweep_compliance.json").read_text())["summary"]) == 2


def test_suite(tmp_path, capsys):
    assert main(["suite", "--runs", "1", "--configs", "standard,cellevac,cgp", "--out-dir", str(tmp_path)]) == 0
    points = {r["point"] for r in rows(tmp_path / "suite.csv")}
    assert points == {"STANDARD", "CELLEVAC", "CGP"}
    assert "CELLEVAC: evac_time median" in capsys.readouterr().out


def test_missing_calibration_is_reported(tmp_path, room):
    with pytest.raises(FileNotFoundError):
        main(["simulate", room[0], room[1], "--out-dir", str(tmp_path)])


def test_workers_flag_and_env(monkeypatch):
    monkeypatch.setenv("CELLEVAC_WORKERS", "2")
    args = build_parser().parse_args(["simulate", "--workers", "4"])
    assert args.workers == 4


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["sweep", "gamma", "--grid", "1"])
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_global_flags_before_or_after_command(tmp_path):
    p = build_parser()
    assert p.parse_args(["--seed", "3", "--out-dir", str(tmp_path), "suite"]).seed == 3
    assert p.parse_args(["suite", "--seed", "4"]).seed == 4
    assert p.parse_args(["--seed", "3", "suite", "--seed", "5"]).seed == 5
    assert p.parse_args(["sweep", "beta", "--grid", "1"]).scenario == "desk"
