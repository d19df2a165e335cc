"""Cartesian genetic programming.

A genotype is a single row of ``n_nodes`` two-input nodes with unrestricted
levels-back: node ``k`` may read any primary input or any earlier node. Each
node has a function gene and two connection genes, and one output gene picks
the result. Addresses ``0 .. n_inputs-1`` are the inputs and ``n_inputs + k``
is node ``k``.

Evolution is the usual 1+lambda loop with point mutation and neutral drift
(offspring replace the parent on equal fitness).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FUNCTIONS = ("+", "-", "*", "/")
FUNCSET_VERSION = "arith4-v1"
INPUT_NAMES = ("D", "E", "G", "W", "P")
PROTECT_EPS = 1e-9


class GenotypeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Genotype:
    n_inputs: int
    nodes: np.ndarray   # (n_nodes, 3) int: function, input a, input b
    output: int

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "nodes", nodes)
        validate(self)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_genes(self) -> int:
        return 3 * self.n_nodes + 1

    def genes(self) -> np.ndarray:
        return np.append(self.nodes.reshape(-1), self.output)

    def __eq__(self, other):
        return (isinstance(other, Genotype) and self.n_inputs == other.n_inputs
                and self.output == other.output and np.array_equal(self.nodes, other.nodes))

    def __hash__(self):
        return hash((self.n_inputs, self.output, self.nodes.tobytes()))


@dataclass(frozen=True)
class Phenotype:
    active: tuple[int, ...]   # node indices in evaluation order

    def __len__(self) -> int:
        return len(self.active)


def validate(g: Genotype) -> None:
    nodes = g.nodes
    if g.n_inputs < 1:
        raise GenotypeError("n_inputs must be >= 1")
    if len(nodes) and (nodes[:, 0].min() < 0 or nodes[:, 0].max() >= len(FUNCTIONS)):
        raise GenotypeError("function gene out of range")
    limit = g.n_inputs + np.arange(len(nodes))
    if len(nodes) and (np.any(nodes[:, 1:] < 0) or np.any(nodes[:, 1] >= limit) or np.any(nodes[:, 2] >= limit)):
        bad = int(np.flatnonzero((nodes[:, 1] >= limit) | (nodes[:, 2] >= limit) | (nodes[:, 1:] < 0).any(1))[0])
        raise GenotypeError(f"node {bad} references itself or a later node (feed-forward violated)")
    if not 0 <= g.output < g.n_inputs + len(nodes):
        raise GenotypeError(f"output gene {g.output} out of range")


def random_genotype(n_nodes: int, rng: np.random.Generator, n_inputs: int = 5) -> Genotype:
    k = np.arange(n_nodes)
    limit = n_inputs + k
    nodes = np.column_stack([
        rng.integers(0, len(FUNCTIONS), n_nodes),
        np.floor(rng.random(n_nodes) * limit).astype(np.int64),
        np.floor(rng.random(n_nodes) * limit).astype(np.int64),
    ])
    out = int(rng.integers(0, n_inputs + n_nodes))
    return Genotype(n_inputs, nodes, out)


def decode(g: Genotype) -> Phenotype:
    """Nodes reachable from the output, in ascending (topological) order."""
    n_in = g.n_inputs
    seen = set()
    stack = [g.output]
    nodes = g.nodes
    while stack:
        addr = stack.pop()
        if addr < n_in:
            continue
        k = addr - n_in
        if k in seen:
            continue
        seen.add(k)
        stack.append(int(nodes[k, 1]))
        stack.append(int(nodes[k, 2]))
    return Phenotype(tuple(sorted(seen)))


def protected_div(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < PROTECT_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        q = x / np.where(small, 1.0, y)
    return np.where(small, 1.0, q)


def _apply(f: int, a, b):
    if f == 0:
        return a + b
    if f == 1:
        return a - b
    if f == 2:
        return a * b
    return protected_div(a, b)


def evaluate(g: Genotype, inputs: Sequence, phenotype: Phenotype | None = None):
    """Evaluate on scalar or array inputs (arrays broadcast elementwise)."""
    if len(inputs) != g.n_inputs:
        raise ValueError(f"expected {g.n_inputs} inputs, got {len(inputs)}")
    ph = phenotype if phenotype is not None else decode(g)
    vals: dict[int, object] = {i: inputs[i] for i in range(g.n_inputs)}
    n_in = g.n_inputs
    for k in ph.active:
        f, a, b = g.nodes[k]
        vals[n_in + k] = _apply(int(f), vals[int(a)], vals[int(b)])
    out = vals[g.output]
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


def mutate(g: Genotype, rate: float, rng: np.random.Generator) -> Genotype:
    """Point mutation: each gene is resampled (to a different valid value) with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("mutation rate must lie in [0, 1]")
    n = g.n_nodes
    hit = np.flatnonzero(rng.random(3 * n + 1) < rate)
    if len(hit) == 0:
        return g
    nodes = g.nodes.copy()
    output = g.output
    for h in hit:
        if h == 3 * n:
            output = _resample(output, g.n_inputs + n, rng)
            continue
        k, slot = divmod(int(h), 3)
        if slot == 0:
            nodes[k, 0] = _resample(int(nodes[k, 0]), len(FUNCTIONS), rng)
        else:
            nodes[k, slot] = _resample(int(nodes[k, slot]), g.n_inputs + k, rng)
    return Genotype(g.n_inputs, nodes, output)


def _resample(current: int, n_values: int, rng: np.random.Generator) -> int:
    if n_values <= 1:
        return current
    v = int(rng.integers(0, n_values - 1))
    return v + 1 if v >= current else v


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------

def to_text(g: Genotype) -> str:
    lines = [f"# cgp-genotype v1 functions={FUNCSET_VERSION}",
             f"n_inputs {g.n_inputs}", f"n_nodes {g.n_nodes}", f"output {g.output}"]
    lines += [f"{f} {a} {b}" for f, a, b in g.nodes]
    return "\n".join(lines) + "\n"


def from_text(text: str) -> Genotype:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# cgp-genotype v1"):
        raise GenotypeError("missing genotype header")
    if f"functions={FUNCSET_VERSION}" not in lines[0]:
        raise GenotypeError(f"unsupported function set in header: {lines[0]}")
    head = {}
    for ln in lines[1:4]:
        key, val = ln.split()
        head[key] = int(val)
    body = np.array([[int(t) for t in ln.split()] for ln in lines[4:]], dtype=np.int64).reshape(-1, 3)
    if len(body) != head["n_nodes"]:
        raise GenotypeError(f"header says {head['n_nodes']} nodes, body has {len(body)}")
    return Genotype(head["n_inputs"], body, head["output"])


def save(g: Genotype, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_text(g))


def load(path) -> Genotype:
    with open(path) as fh:
        return from_text(fh.read())


def to_sexpr(g: Genotype, names: Sequence[str] = INPUT_NAMES) -> str:
    def rec(addr):
        if addr < g.n_inputs:
            return names[addr]
        f, a, b = g.nodes[addr - g.n_inputs]
        return f"({FUNCTIONS[f]} {rec(int(a))} {rec(int(b))})"
    return rec(g.output)


def _tokens(text: str) -> list[str]:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace() or ch == "\\":
            i += 1
        elif ch in "()+-*/":
            out.append(ch)
            i += 1
        else:
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            if j == i:
                raise GenotypeError(f"unexpected character {ch!r} in expression")
            # single-letter inputs may be written back to back ("PD" = P D)
            word = text[i:j]
            out.extend(list(word) if all(c in "DEGWP" for c in word) else [word])
            i = j
    return out


def from_sexpr(text: str, names: Sequence[str] = INPUT_NAMES, pad_to: int | None = None) -> Genotype:
    """Compile a prefix expression such as ``(* (- P D) E)`` into a genotype.

    The outermost parentheses may be omitted. Identical subexpressions share
    one node. ``pad_to`` appends inactive nodes up to that size.
    """
    toks = _tokens(text)
    if toks and toks[0] in FUNCTIONS:
        toks = ["("] + toks + [")"]
    pos = 0
    nodes: list[tuple[int, int, int]] = []
    memo: dict[tuple[int, int, int], int] = {}
    n_in = len(names)

    def parse() -> int:
        nonlocal pos
        if pos >= len(toks):
            raise GenotypeError("unexpected end of expression")
        t = toks[pos]
        pos += 1
        if t == "(":
            op = toks[pos]
            pos += 1
            if op not in FUNCTIONS:
                raise GenotypeError(f"unknown operator {op!r}")
            a = parse()
            b = parse()
            if pos >= len(toks) or toks[pos] != ")":
                raise GenotypeError("expected ')' after two operands")
            pos += 1
            key = (FUNCTIONS.index(op), a, b)
            if key not in memo:
                nodes.append(key)
                memo[key] = n_in + len(nodes) - 1
            return memo[key]
        if t in names:
            return names.index(t)
        raise GenotypeError(f"unexpected token {t!r}")

    out = parse()
    if pos != len(toks):
        raise GenotypeError(f"trailing tokens after position {pos}")
    arr = np.array(nodes, dtype=np.int64).reshape(-1, 3)
    if pad_to is not None and pad_to > len(arr):
        # inert padding: nodes adding input 0 to itself, never referenced
        arr = np.vstack([arr, np.zeros((pad_to - len(arr), 3), dtype=np.int64)])
    return Genotype(n_in, arr, out)


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvolutionConfig:
    generations: int = 100
    lam: int = 4
    mutation_rate: float = 0.0075
    n_nodes: int = 4000
    n_inputs: int = 5
    seed: int = 0
    target_fitness: float | None = None   # stop early once reached

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("lambda must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not 0.0 < self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in (0, 1]")
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")


@dataclass
class EvolutionResult:
    best: Genotype
    best_fitness: float
    history: list[float] = field(default_factory=list)   # best-so-far per generation
    evaluations: int = 0


def _safe(fitness_fn, g) -> float:
    try:
        f = float(fitness_fn(g))
    except Exception:
        return math.inf
    return f if not math.isnan(f) else math.inf


def evolve_one_plus_lambda(fitness_fn: Callable[[Genotype], float], config: EvolutionConfig,
                           initial: Genotype | None = None,
                           callback: Callable[[int, Genotype, float], None] | None = None) -> EvolutionResult:
    """Minimize ``fitness_fn`` with a 1+lambda strategy.

    A failing evaluation scores +inf. Offspring win ties with the parent.
    """
    rng = np.random.default_rng(config.seed)
    parent = initial if initial is not None else random_genotype(config.n_nodes, rng, config.n_inputs)
    pf = _safe(fitness_fn, parent)
    res = EvolutionResult(parent, pf, [pf], 1)
    for gen in range(1, config.generations + 1):
        if config.target_fitness is not None and pf <= config.target_fitness:
            break
        best_child, best_cf = None, math.inf
        for _ in range(config.lam):
            child = mutate(parent, config.mutation_rate, rng)
            cf = _safe(fitness_fn, child)
            res.evaluations += 1
            if best_child is None or cf < best_cf:
                best_child, best_cf = child, cf
        if best_cf <= pf:
            parent, pf = best_child, best_cf
        res.best, res.best_fitness = parent, pf
        res.history.append(pf)
        if callback is not None:
            callback(gen, parent, pf)
    return res
