"""The two search procedures on cheap problems.

Tabu search walks a grid over the five weights, forbidding recent moves and
widening its step when it stalls. The CGP 1+lambda strategy mutates a formula
graph and keeps the best child. Both are shown on toy objectives; the CLI
wires them to simulation-based fitness (`cellevac optimize`, `cellevac evolve-cgp`).
"""
import numpy as np

from cellevac import cgp
from cellevac.cli import smoke_fitness
from cellevac.optimizer import BETA_BOUNDS, ReplicationPolicy, TabuConfig, replicate, tabu_search

target = np.array([-20.0, 3.0, -5.0, 1.0, 12.0])
cfg = TabuConfig(iterations=200, seed=0)
res = tabu_search(lambda x: float(np.sum((np.asarray(x) - target) ** 2)), cfg)
print("Tabu target", target, "found", np.round(res.best.x, 3), "step", np.round(cfg.steps(), 3))
print("  best so far every 25 iterations:", [round(r.best_so_far, 2) for r in res.trace[::25]])

# replications continue until the 80% interval is within 0.5% of the mean
for noise in (0.0, 0.05, 0.2):
    st = replicate(lambda s: 10.0 + noise * np.random.default_rng(s).standard_normal(), ReplicationPolicy())
    print(f"noise {noise:5.3f}: {st.n} replications, mean {st.mean:.3f} +- {st.half_width:.4f}")

evo = cgp.EvolutionConfig(generations=5000, lam=4, mutation_rate=0.05, n_nodes=50, seed=0, target_fitness=1e-6)
out = cgp.evolve_one_plus_lambda(smoke_fitness, evo)
print(f"CGP smoke: fitness {out.best_fitness:.2g} after {len(out.history)} generations: {cgp.to_sexpr(out.best)}")
print("search box:", BETA_BOUNDS.tolist())
