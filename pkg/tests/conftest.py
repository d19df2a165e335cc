import numpy as np
import pytest

from cellevac.scenario import load_scenario, scenario_from_dict


def box_scenario(width=20.0, height=10.0, gates=None, cell_width=6.0, population=0,
                 flows=None, cap=900.0, name="box"):
    """Rectangular room; ``gates`` is a list of (segment, entry_point or None)."""
    if gates is None:
        gates = [(((width, height / 2 - 1.0), (width, height / 2 + 1.0)), None)]
    exits = []
    for k, (seg, entry) in enumerate(gates):
        (ax, ay), (bx, by) = seg
        raw = {"id": k + 1, "width": float(np.hypot(bx - ax, by - ay)),
               "segment": [[ax, ay], [bx, by]]}
        if entry is not None:
            raw["entry_point"] = list(entry)
        exits.append(raw)
    raw = {
        "name": name,
        "boundary": [[0, 0], [width, 0], [width, height], [0, height]],
        "exits": exits,
        "cells": {"cell_width": cell_width, "orientation": "pointy",
                  "origin": [cell_width / 2, cell_width / 2]},
        "population": {"count": population, "speed_min": 1.24, "speed_max": 1.48},
        "limits": {"sim_time_cap_s": cap},
    }
    if flows:
        raw["external_flows"] = flows
    return scenario_from_dict(raw)


@pytest.fixture(scope="session")
def desk():
    return load_scenario("desk")


@pytest.fixture(scope="session")
def arena():
    return load_scenario("madrid_arena")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
