"""Score gate safety from density series.

Densities are mapped to [0, 1] between the safety threshold and jam density.
A gate's score is minus 100 times (mean + gamma * variance) of that series, so
zero means never unsafe and -100 means jammed throughout.
"""
import numpy as np

from cellevac.fundamental_diagrams import dynamics_for
from cellevac.safety import exit_safety, running_safety, safety_report
from cellevac.scenario import load_scenario

gate = dynamics_for(load_scenario("desk"))[0]
t = np.arange(0, 120, 2.0)
series = {
    "calm": np.full(t.size, 1.0),
    "jammed": np.full(t.size, gate.rho_lock),
    "surge": np.where((t > 40) & (t < 80), gate.rho_over, 1.0),
}
for name, rho in series.items():
    print(f"{name:7s} score {exit_safety(rho, gate):8.2f}")

run = running_safety(series["surge"], gate)
print("surge, running score every 20 s:", np.round(run[::10], 1))

report = safety_report(np.column_stack([series["calm"], series["surge"]]), [gate, gate])
print(f"two gates: per gate {np.round(report.per_exit, 2)}, overall {report.Sf:.2f}, variance {report.Sf_var:.2f}")
