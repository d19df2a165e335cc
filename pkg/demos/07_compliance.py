"""How much of the crowd has to follow the guidance?

A fraction of the pedestrians (spawned and arriving) follows the controller;
the rest choose on their own. Three seeds per level keep this to about a
minute; `cellevac sweep compliance` runs the full experiment.
"""
from cellevac.harness import ExperimentSpec, compliance_sweep

spec = ExperimentSpec(kind="compliance", parameter="compliance", grid=(0.0, 0.4, 0.8, 1.0), runs=3,
                      controller="mlm")
table = compliance_sweep(spec)
for s in table.summary:
    print(f"{int(s['point'] * 100):3d}% follow: evacuation median {s['evac_time']['median']:.2f} min, "
          f"decision changes {s['decision_mean']['median']:.3f}, safety {s['Sf']['median']:.1f}")
