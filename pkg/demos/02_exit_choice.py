"""How a pedestrian weighs the gates.

Each gate gets a utility from five normalized attributes: distance, width,
how many people in the same cell already head there, how congested it is,
and whether it is the pedestrian's current target. Probabilities follow from
a softmax; the weight on the current target fades as the hall empties.
"""
import numpy as np

from cellevac.behavior import PRESETS, AttributeVector, beta_p_of_t, choice_probabilities, utility

attrs = AttributeVector(
    dist_norm=np.array([0.2, 0.5, 1.0]),
    width_norm=np.array([0.75, 1.0, 0.75]),
    group_ratio=np.array([0.6, 0.3, 0.1]),
    excon_norm=np.array([1.2, 0.4, 0.1]),
    personal=np.array([1.0, 0.0, 0.0]),
    system=np.array([0.0, 1.0, 0.0]),
)

for name in ("STANDARD", "OPTIMAL", "COMPLIANT"):
    v = utility(attrs, PRESETS[name], n_now=300, n_initial=300)
    print(f"{name:9s} utilities {np.round(v, 3)} -> probabilities {np.round(choice_probabilities(v), 3)}")

# the softmax only sees utility differences
v = np.array([1.0, 0.0])
print("\nsoftmax of (1, 0):", choice_probabilities(v), " shifted by 40:", choice_probabilities(v + 40))

print("\nweight on the current target while the hall empties (beta_P = 8.515, 300 people):")
for left in (300, 225, 150, 75, 0):
    print(f"  {left:3d} inside -> {beta_p_of_t(8.515, left, 300):.3f}")
