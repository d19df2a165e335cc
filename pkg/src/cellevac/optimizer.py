"""Simulation-optimization plumbing.

* adaptive replication: repeat a stochastic evaluation until a Student-t
  confidence interval on the mean is tight enough (bounded run count);
* the evacuation fitness (minutes to evacuate minus safety, plus people still
  waiting for the CGP variant) and the viability filter;
* a bounded-box Tabu search over coefficient vectors;
* objective factories wiring both searches to full simulations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

# (D, G, E, W, P)
BETA_NAMES = ("beta_D", "beta_G", "beta_E", "beta_W", "beta_P")
BETA_BOUNDS = np.array([[-40.0, 0.0], [-10.0, 10.0], [-10.0, 10.0], [0.0, 5.0], [0.0, 30.0]])
CAP_MINUTES = 15.0


# ---------------------------------------------------------------------------
# replication
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicationPolicy:
    min_reps: int = 3
    max_reps: int = 10
    confidence: float = 0.80
    error_percent: float = 0.5
    controlled_output: str = "evac_time"

    def __post_init__(self):
        if not 1 <= self.min_reps <= self.max_reps:
            raise ValueError("need 1 <= min_reps <= max_reps")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if not self.error_percent > 0:
            raise ValueError("error_percent must be > 0")


@dataclass
class ReplicationStats:
    n: int
    mean: float
    half_width: float
    values: list[float] = field(default_factory=list)
    outputs: list[Any] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    viable: bool = True
    error: str | None = None


def half_width(values: Sequence[float], confidence: float) -> float:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return math.inf
    s = v.std(ddof=1)
    if s == 0:
        return 0.0
    return float(stats.t.ppf(0.5 + confidence / 2.0, len(v) - 1) * s / np.sqrt(len(v)))


def replication_seeds(seed: int, n: int) -> list[int]:
    """The policy-owned seed stream; prefixes do not depend on ``n``."""
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


def replicate(evaluate_once: Callable[[int], Any], policy: ReplicationPolicy = ReplicationPolicy(),
              seed: int = 0, key: Callable[[Any], float] | None = None) -> ReplicationStats:
    """Run ``evaluate_once(seed)`` until the CI closes or ``max_reps`` is reached.

    ``key`` extracts the controlled output from each evaluation (default:
    the evaluation itself is the number). A raising evaluation, or a
    non-finite controlled output, marks the whole set non-viable and stops.
    """
    key = key or float
    seeds = replication_seeds(seed, policy.max_reps)
    st = ReplicationStats(0, math.nan, math.inf)
    while st.n < policy.max_reps:
        s = seeds[st.n]
        try:
            out = evaluate_once(s)
            val = float(key(out))
        except Exception as exc:  # noqa: BLE001 - any failure makes the candidate non-viable
            st.viable, st.error = False, f"{type(exc).__name__}: {exc}"
            st.seeds.append(s)
            st.n += 1
            break
        st.seeds.append(s)
        st.outputs.append(out)
        st.values.append(val)
        st.n += 1
        if not math.isfinite(val):
            st.viable = False
            break
        if st.n >= policy.min_reps:
            hw = half_width(st.values, policy.confidence)
            if hw <= policy.error_percent / 100.0 * abs(np.mean(st.values)):
                break
    if st.viable and st.values:
        st.mean = float(np.mean(st.values))
        st.half_width = half_width(st.values, policy.confidence)
    else:
        st.mean = math.inf
    return st


# ---------------------------------------------------------------------------
# fitness and viability
# ---------------------------------------------------------------------------

def run_fitness(run, variant: str = "mlm") -> float:
    f = run.evac_time - run.safety.Sf
    if variant == "cgp":
        f += run.remaining_peds
    elif variant != "mlm":
        raise ValueError(f"unknown fitness variant {variant!r}")
    return float(f)


def fitness(run_results: Sequence, variant: str = "mlm") -> float:
    """Replication mean of ``evacTime[min] - Sf`` (``+ numberOfWaitPeds`` for CGP)."""
    if len(run_results) == 0:
        raise ValueError("fitness needs at least one run")
    return float(np.mean([run_fitness(r, variant) for r in run_results]))


def viability(run_result, cap_minutes: float = CAP_MINUTES) -> bool:
    return run_result.remaining_peds == 0 and run_result.evac_time <= cap_minutes + 1e-9


@dataclass
class Candidate:
    x: tuple[float, ...]
    fitness: float
    viable: bool
    n_reps: int = 1
    mean: float = math.nan
    half_width: float = math.nan
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# tabu search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TabuConfig:
    iterations: int = 200
    bounds: Any = None               # (k, 2); default: the beta box
    step: Any = None                 # scalar or per coordinate; default 10% of each range
    tenure: int = 10
    anneal_after: int = 40
    anneal_factor: float = 0.7
    start: Any = None                # default: box centre
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        b = self.box()
        if not np.all(np.isfinite(b)) or np.any(b[:, 0] > b[:, 1]):
            raise ValueError("bounds must be finite with lower <= upper")
        if np.any(self.steps() <= 0):
            raise ValueError("steps must be > 0")
        if self.tenure < 0:
            raise ValueError("tenure must be >= 0")

    def box(self) -> np.ndarray:
        return np.asarray(BETA_BOUNDS if self.bounds is None else self.bounds, dtype=float).reshape(-1, 2)

    def steps(self) -> np.ndarray:
        b = self.box()
        if self.step is None:
            return 0.1 * (b[:, 1] - b[:, 0])
        return np.broadcast_to(np.asarray(self.step, dtype=float), (len(b),)).copy()

    def start_point(self) -> np.ndarray:
        b = self.box()
        if self.start is None:
            return b.mean(axis=1)
        return np.clip(np.asarray(self.start, dtype=float), b[:, 0], b[:, 1])


@dataclass
class TraceRow:
    iteration: int
    x: tuple[float, ...]
    fitness: float
    viable: bool
    best_so_far: float
    n_reps: int = 1


@dataclass
class TabuResult:
    best: Candidate | None
    trace: list[TraceRow]
    evaluations: int

    @property
    def exhausted(self) -> bool:
        """True when no viable candidate was found within the budget."""
        return self.best is None


def _as_candidate(x, out) -> Candidate:
    if isinstance(out, Candidate):
        return out
    f = float(out)
    return Candidate(tuple(float(v) for v in x), f, math.isfinite(f))


def tabu_search(objective: Callable[[np.ndarray], Any], config: TabuConfig = TabuConfig()) -> TabuResult:
    """Coordinate-step Tabu search (minimization) within a box.

    Neighbours of the incumbent move one coordinate by +/- its step (clipped
    to the box). Neighbours are scanned in random order, except that the last
    successful move is retried first, and the first improving admissible one
    is taken. If none improves, the best admissible neighbour is taken anyway
    (so the search can leave local minima). Reversing a move is tabu for
    ``tenure`` moves unless it beats the best so far. After ``anneal_after``
    evaluations without a new best, steps shrink by ``anneal_factor``.
    ``iterations`` counts objective evaluations; revisited points come from
    a cache and are free.
    """
    rng = np.random.default_rng(config.seed)
    box = config.box()
    lo, hi = box[:, 0], box[:, 1]
    k = len(box)
    step = config.steps()
    cache: dict[tuple, Candidate] = {}
    trace: list[TraceRow] = []
    best: Candidate | None = None

    def key_of(y):
        return tuple(np.round(y, 12).tolist())

    def evaluate(y) -> Candidate | None:
        nonlocal best
        kk = key_of(y)
        if kk in cache:
            return cache[kk]
        if len(trace) >= config.iterations:
            return None
        c = _as_candidate(kk, objective(np.array(kk)))
        if not c.viable:
            c.fitness = math.inf
        cache[kk] = c
        if c.viable and (best is None or c.fitness < best.fitness):
            best = c
        trace.append(TraceRow(len(trace) + 1, kk, c.fitness, c.viable,
                              best.fitness if best is not None else math.inf, c.n_reps))
        return c

    x = config.start_point()
    cur = evaluate(x)
    tabu: dict[tuple[int, int], int] = {}
    moves = 0
    last_move: tuple[int, int] | None = None
    stale = 0
    best_seen = best.fitness if best is not None else math.inf

    while len(trace) < config.iterations:
        before = len(trace)
        options = [(i, d) for i in range(k) for d in (1, -1)]
        order = [options[j] for j in rng.permutation(len(options))]
        if last_move in order:
            order.remove(last_move)
            order.insert(0, last_move)
        chosen = None
        fallback = None
        for i, d in order:
            y = x.copy()
            y[i] = np.clip(y[i] + d * step[i], lo[i], hi[i])
            if y[i] == x[i]:
                continue
            c = evaluate(y)
            if c is None:
                break
            is_tabu = tabu.get((i, d), -1) > moves
            # aspiration: a tabu move is allowed when it produced the best point so far
            aspiration = c.viable and c is best
            if is_tabu and not aspiration:
                continue
            if not cur.viable or c.fitness < cur.fitness:
                if c.viable or not cur.viable:
                    chosen = (i, d, y, c)
                    if c.viable:
                        break
            if fallback is None or c.fitness < fallback[3].fitness:
                fallback = (i, d, y, c)
        if chosen is None:
            chosen = fallback
        if chosen is not None and (chosen[3].viable or not cur.viable):
            i, d, y, c = chosen
            x, cur = y, c
            tabu[(i, -d)] = moves + 1 + config.tenure
            moves += 1
            last_move = (i, d)

        new_evals = len(trace) - before
        if best is not None and best.fitness < best_seen:
            best_seen = best.fitness
            stale = 0
        else:
            stale += max(new_evals, 1)
        if stale >= config.anneal_after:
            step = step * config.anneal_factor
            stale = 0
        if new_evals == 0 and chosen is None:
            # every neighbour cached and tabu: shrink to reach fresh points
            step = step * config.anneal_factor
            if np.all(step < 1e-9 * np.maximum(hi - lo, 1.0)):
                break
    return TabuResult(best, trace, len(trace))


# ---------------------------------------------------------------------------
# simulation objectives
# ---------------------------------------------------------------------------

def beta_objective(scenario, target: str = "pedestrian", policy: ReplicationPolicy | None = None,
                   seed: int = 0, dynamics=None, workers: int = 1, **run_kwargs):
    """Objective over (D, G, E, W, P) for the pedestrians' model or for the controller.

    ``pedestrian``: everyone uses the candidate coefficients, no controller.
    ``controller``: the controller uses them and everyone complies.
    """
    from .behavior import PRESETS, BetaConfig
    from .controller import ControllerConfig
    from .harness import BehaviorConfig

    policy = policy or ReplicationPolicy(controlled_output="fitness")
    if target not in ("pedestrian", "controller"):
        raise ValueError("target must be 'pedestrian' or 'controller'")

    def objective(x):
        betas = BetaConfig.from_array(x)
        if target == "pedestrian":
            behavior, ctrl = BehaviorConfig(betas, 0.0), ControllerConfig()
        else:
            behavior = BehaviorConfig(PRESETS["STANDARD"], 1.0)
            ctrl = ControllerConfig("mlm", betas)
        return evaluate_candidate(scenario, behavior, ctrl, policy, seed, dynamics, "mlm", x,
                                  workers=workers, **run_kwargs)

    return objective


def evaluate_candidate(scenario, behavior, ctrl, policy, seed, dynamics, variant, x,
                       workers: int = 1, **run_kwargs) -> Candidate:
    from .harness import run_many

    # the first min_reps replications are always needed, so they can run in parallel
    first = replication_seeds(seed, policy.max_reps)[: policy.min_reps]
    cache = {}
    if workers > 1:
        try:
            cache = dict(zip(first, run_many(scenario, behavior, ctrl, first, dynamics=dynamics,
                                             workers=workers, **run_kwargs)))
        except Exception:  # noqa: BLE001 - replay sequentially so the failure is recorded
            cache = {}

    def once(s):
        if s in cache:
            return cache.pop(s)
        return run_many(scenario, behavior, ctrl, [s], dynamics=dynamics, workers=1, **run_kwargs)[0]

    def controlled(run):
        if variant == "mlm" and not viability(run):
            return math.inf
        if policy.controlled_output == "evac_time":
            return run.evac_time
        return run_fitness(run, variant)

    st = replicate(once, policy, seed, key=controlled)
    runs = st.outputs
    viable = st.viable and all(viability(r) for r in runs) if variant == "mlm" else st.viable
    fit = fitness(runs, variant) if runs and viable else math.inf
    raw = {}
    if runs:
        raw = {
            "evac_time": float(np.mean([r.evac_time for r in runs])),
            "Sf": float(np.mean([r.safety.Sf for r in runs])),
            "remaining": float(np.mean([r.remaining_peds for r in runs])),
        }
    return Candidate(tuple(float(v) for v in x), fit, viable, st.n, st.mean, st.half_width, raw)


def cgp_fitness_fn(scenario, policy: ReplicationPolicy | None = None, seed: int = 0, dynamics=None,
                   **run_kwargs):
    """Fitness of a genotype used as the controller rule, everyone complying."""
    from .behavior import PRESETS
    from .controller import ControllerConfig
    from .harness import BehaviorConfig

    policy = policy or ReplicationPolicy(controlled_output="fitness")
    behavior = BehaviorConfig(PRESETS["STANDARD"], 1.0)

    def fn(genotype):
        c = evaluate_candidate(scenario, behavior, ControllerConfig("cgp", genotype=genotype), policy,
                               seed, dynamics, "cgp", (), **run_kwargs)
        return c.fitness

    return fn
