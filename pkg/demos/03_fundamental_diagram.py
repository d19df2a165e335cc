"""Calibrate one gate's flow-density curve.

Four streams of arrivals ramp up and down in triangles, then the gate is
locked so the queue builds to jam density. A robust degree-6 polynomial is fit
to the free-flow samples; its first maximum is the critical density, and the
safety threshold sits between it and overcrowding.

This is the full one-hour schedule on one gate, about 20 s of compute;
`cellevac calibrate-fd` does every gate and writes the calibration file.
"""
import numpy as np

from cellevac.fundamental_diagrams import dynamics_for, dynamics_from_samples, run_fd_protocol
from cellevac.scenario import load_scenario

desk = load_scenario("desk")
samples = run_fd_protocol(desk, exit_id=3, peak_flow=8.0, seed=1)
print(f"{len(samples.density)} samples, {int(samples.lock_mask.sum())} after locking")

dyn, fit = dynamics_from_samples(samples, desk.exits[2].width)
print(f"this run: crit {dyn.rho_crit:.2f}  safe {dyn.rho_sf:.2f}  over {dyn.rho_over:.2f}  "
      f"lock {dyn.rho_lock:.2f} peds/m2")
grid = np.linspace(0.5, dyn.rho_over, 6)
lo, hi = fit.band(grid, 0.90)
for x, y, a, b in zip(grid, fit(grid), lo, hi):
    print(f"  density {x:.2f}: flow {y:.2f} peds/s  (90% band {a:.2f} .. {b:.2f})")

bundled = dynamics_for(desk)[2]
print(f"bundled (seed 0): crit {bundled.rho_crit:.2f}  safe {bundled.rho_sf:.2f}  over {bundled.rho_over:.2f}  "
      f"lock {bundled.rho_lock:.2f}; capacity {bundled.flow_at(bundled.rho_crit):.2f} peds/s")
