"""Flow-density calibration of exit gates.

For each gate, pedestrians are fed into the four cells closest to it along
repeated triangular ramps, the gate is locked near the end of the horizon,
and density and flow are sampled every two seconds. A sixth-order polynomial
is fitted to the flow-density cloud by robust (bisquare) least squares and
three densities are read off:

* ``rho_crit``: the free-flow capacity peak (first local maximum of the fit);
* ``rho_over``: the typical congested density once capacity breaks down
  (histogram mode of the samples above ``rho_crit``);
* ``rho_lock``: the plateau reached while the gate is locked (95th percentile
  of the locked-phase densities).

The safety threshold ``rho_sf`` is a weighted average of the first two.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate, stats

from .motion import (
    MeasurementAreas,
    SimState,
    inject_at,
    lock_exit,
    measure,
    sfm_step,
)
from .scenario import Scenario

BISQUARE_C = 4.685
MAD_SCALE = 1.4826
RHO_SF_WEIGHTS = (0.9, 0.1)


class FitError(ValueError):
    pass


class ThresholdError(ValueError):
    pass


@dataclass
class FDSampleSet:
    exit_id: int
    time: np.ndarray
    density: np.ndarray
    flow: np.ndarray
    lock_mask: np.ndarray
    injected: int = 0
    expected_injected: float = 0.0

    def __len__(self) -> int:
        return len(self.density)

    @property
    def free(self) -> "tuple[np.ndarray, np.ndarray]":
        m = ~self.lock_mask
        return self.density[m], self.flow[m]


@dataclass(frozen=True)
class ExitDynamics:
    exit_id: int
    width: float
    poly_coeffs: tuple[float, ...]   # increasing powers c0 .. c6
    rho_crit: float
    rho_over: float
    rho_lock: float
    rho_sf: float

    def __post_init__(self):
        if not 0 < self.rho_crit < self.rho_over < self.rho_lock:
            raise ThresholdError(
                f"exit {self.exit_id}: need 0 < rho_crit < rho_over < rho_lock, got "
                f"{self.rho_crit:.4g}, {self.rho_over:.4g}, {self.rho_lock:.4g}"
            )
        if not self.rho_crit < self.rho_sf < self.rho_over:
            raise ThresholdError(f"exit {self.exit_id}: rho_sf outside (rho_crit, rho_over)")

    def flow_at(self, rho):
        return P.polyval(np.asarray(rho, dtype=float), self.poly_coeffs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["poly_coeffs"] = list(self.poly_coeffs)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExitDynamics":
        return cls(int(raw["exit_id"]), float(raw["width"]), tuple(float(c) for c in raw["poly_coeffs"]),
                   float(raw["rho_crit"]), float(raw["rho_over"]), float(raw["rho_lock"]), float(raw["rho_sf"]))


@dataclass
class FDFit:
    coeffs: np.ndarray          # increasing powers, original density units
    cov: np.ndarray             # covariance of the scaled coefficients
    scale: float                # density scale used internally
    dof: int
    weights: np.ndarray
    iterations: int
    converged: bool
    domain: tuple[float, float] = (0.0, 0.0)

    def __call__(self, x):
        return P.polyval(np.asarray(x, dtype=float), self.coeffs)

    def band(self, x, level: float = 0.90):
        """Pointwise confidence band of the fitted mean at ``level``."""
        x = np.asarray(x, dtype=float)
        X = np.vander(x / self.scale, len(self.coeffs), increasing=True)
        se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, self.cov, X), 0.0))
        tq = stats.t.ppf(0.5 + level / 2.0, max(self.dof, 1))
        y = self(x)
        return y - tq * se, y + tq * se


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _wls(X, y, w):
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return beta


def fit_polynomial_robust(density, flow, degree: int = 6, max_iter: int = 50, tol: float = 1e-8,
                          robust: bool = True) -> FDFit:
    """Iteratively reweighted least squares with Tukey bisquare weights.

    ``robust=False`` gives the ordinary least-squares fit on the same basis.
    """
    x = np.asarray(density, dtype=float).reshape(-1)
    y = np.asarray(flow, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise FitError("density and flow must have the same length")
    p = degree + 1
    if len(np.unique(x)) < p:
        raise FitError(f"need at least {p} distinct densities for a degree-{degree} fit")
    scale = float(np.max(np.abs(x))) or 1.0
    X = np.vander(x / scale, p, increasing=True)
    if np.linalg.matrix_rank(X) < p:
        raise FitError("rank-deficient design: density support is degenerate")
    pw = scale ** -np.arange(p)

    w = np.ones_like(x)
    b = _wls(X, y, w)
    # leverage of the unweighted design, for residual adjustment
    Q, _ = np.linalg.qr(X)
    h = np.minimum(np.sum(Q * Q, axis=1), 1 - 1e-12)
    it, converged = 0, not robust
    while robust and it < max_iter:
        it += 1
        r = (y - X @ b) / np.sqrt(1.0 - h)
        s = MAD_SCALE * np.median(np.abs(r - np.median(r)))
        if s <= 1e-12 * max(1.0, np.max(np.abs(y))):
            converged = True
            break
        u = r / (BISQUARE_C * s)
        w = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
        b_new = _wls(X, y, w)
        if np.max(np.abs((b_new - b) * pw)) < tol:
            b = b_new
            converged = True
            break
        b = b_new

    res = y - X @ b
    dof = max(int(np.sum(w > 0)) - p, 1)
    sigma2 = float(np.sum(w * res * res) / dof)
    XtWX = X.T @ (X * w[:, None])
    cov = sigma2 * np.linalg.pinv(XtWX)
    return FDFit(b * pw, cov, scale, dof, w, it, converged, (float(x.min()), float(x.max())))


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------

def first_local_maximum(coeffs, lo: float, hi: float) -> float:
    d1 = P.polyder(coeffs)
    d2 = P.polyder(d1)
    roots = P.polyroots(d1) if np.any(d1) else np.array([])
    cands = sorted(
        float(r.real) for r in np.atleast_1d(roots)
        if abs(r.imag) < 1e-9 and lo < r.real < hi and P.polyval(r.real, d2) < 0
    )
    if not cands:
        raise ThresholdError("fitted curve has no local maximum inside the observed density range")
    return cands[0]


def rho_sf(rho_crit: float, rho_over: float, weights=RHO_SF_WEIGHTS) -> float:
    if not rho_crit < rho_over:
        raise ValueError("need rho_crit < rho_over")
    a, b = weights
    return a * rho_crit + b * rho_over


def extract_thresholds(fit: FDFit, samples: FDSampleSet, bin_width: float = 0.1) -> tuple[float, float, float]:
    dens, _ = samples.free
    lo, hi = float(dens.min()), float(dens.max())
    crit = first_local_maximum(fit.coeffs, lo, hi)
    over_samples = dens[dens > crit]
    if len(over_samples) == 0:
        raise ThresholdError("no congested samples above rho_crit; rerun with a higher peak flow")
    n_bins = max(int(np.ceil((over_samples.max() - crit) / bin_width)), 1)
    edges = crit + bin_width * np.arange(n_bins + 1)
    hist, _ = np.histogram(over_samples, bins=edges)
    k = int(np.argmax(hist))
    over = float(0.5 * (edges[k] + edges[k + 1]))
    locked = samples.density[samples.lock_mask]
    if len(locked) == 0:
        raise ThresholdError("sample set has no lock phase")
    lock = float(np.percentile(locked, 95))
    if not crit < over < lock:
        raise ThresholdError(f"threshold ordering violated: {crit:.4g}, {over:.4g}, {lock:.4g}")
    return crit, over, lock


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolConfig:
    horizon: float = 3600.0
    cycles: int = 4
    cycle_length: float = 900.0
    lock_at: float = 3000.0
    sample_interval: float = 2.0
    dt: float = 0.05
    streams: int = 4


def triangular_rate(t, peak: float, cycle_length: float, cycles: int):
    """Rate at time ``t`` of a train of ``cycles`` symmetric triangles of height ``peak``."""
    t = np.asarray(t, dtype=float)
    phase = np.mod(t, cycle_length) / cycle_length
    tri = 1.0 - np.abs(2.0 * phase - 1.0)
    return np.where((t >= 0) & (t < cycles * cycle_length), peak * tri, 0.0)


def expected_injections(peak_flow: float, cfg: ProtocolConfig) -> float:
    t_end = min(cfg.horizon, cfg.cycles * cfg.cycle_length)
    full = int(t_end // cfg.cycle_length)
    total = full * 0.5 * peak_flow * cfg.cycle_length
    rest = t_end - full * cfg.cycle_length
    if rest > 0:
        ts = np.linspace(0, rest, 2001)
        total += integrate.trapezoid(triangular_rate(ts, peak_flow, cfg.cycle_length, 1), ts)
    return float(total)


def _stream_points(scenario: Scenario, areas: MeasurementAreas, exit_id: int,
                   min_gap: float = 4.0) -> list[np.ndarray]:
    """One feed point per measurement cell, kept at least ``min_gap`` from the gate.

    Without the gap, clipped cells hugging the gate would drop arrivals right
    at the gate line and the measured flow would just echo the feed rate.
    """
    from shapely.geometry import Point, Polygon

    from .geometry import point_segment_distance

    gate = scenario.exits[exit_id - 1]
    inward = -scenario.gate_normals[exit_id - 1]
    pts = []
    for c in areas.cells[exit_id - 1]:
        clipped = Polygon(scenario.cells[c].vertices).intersection(scenario.polygon)
        p = clipped.centroid
        if not scenario.polygon.contains(p):
            p = clipped.representative_point()
        q = np.array([p.x, p.y])
        gap = float(point_segment_distance(q, gate.a, gate.b))
        if gap < min_gap:
            q = q + (min_gap - gap) * inward
            if not scenario.polygon.buffer(-1.0).contains(Point(q)):
                q = gate.midpoint + min_gap * inward
        pts.append(q)
    return pts


def run_fd_protocol(scenario: Scenario, exit_id: int, peak_flow: float, seed: int,
                    config: ProtocolConfig = ProtocolConfig()) -> FDSampleSet:
    """Feed the gate with four triangular-ramp streams and sample density and flow.

    ``peak_flow`` (peds/s) is the combined peak of the four streams. Other
    gates are closed during the protocol so every pedestrian uses the gate
    under study.
    """
    if not 1 <= exit_id <= scenario.n_exits:
        raise KeyError(f"unknown exit id {exit_id}")
    if peak_flow <= 0:
        raise ValueError("peak_flow must be > 0")
    rng = np.random.default_rng([seed, exit_id])
    state = SimState.from_population([], scenario)
    for j in range(1, scenario.n_exits + 1):
        if j != exit_id:
            lock_exit(state, j)
    areas = MeasurementAreas(scenario)
    points = _stream_points(scenario, areas, exit_id)
    per_stream = peak_flow / len(points)

    dt = config.dt
    n_steps = int(round(config.horizon / dt))
    sample_every = int(round(config.sample_interval / dt))
    lock_step = int(round(config.lock_at / dt))
    times, dens, flows, mask = [], [], [], []
    for k in range(n_steps):
        t = k * dt
        if k == lock_step:
            lock_exit(state, exit_id)
        lam = float(triangular_rate(t + 0.5 * dt, per_stream, config.cycle_length, config.cycles)) * dt
        for s, pt in enumerate(points):
            n_new = int(rng.poisson(lam)) if lam > 0 else 0
            if n_new or state.backlog.get(("fd", s), 0):
                inject_at(state, scenario, ("fd", s), pt, n_new, rng, target=exit_id)
        sfm_step(state, scenario, dt)
        if (k + 1) % sample_every == 0:
            sample = measure(state, scenario, config.sample_interval, areas)[exit_id - 1]
            times.append(sample.time)
            dens.append(sample.density)
            flows.append(sample.flow)
            mask.append(sample.time > config.lock_at + 1e-9)
    injected = state.n_injected + sum(state.backlog.values())
    return FDSampleSet(exit_id, np.array(times), np.array(dens), np.array(flows), np.array(mask, dtype=bool),
                       injected=int(injected), expected_injected=expected_injections(peak_flow, config))


def dynamics_from_samples(samples: FDSampleSet, width: float, degree: int = 6,
                          weights=RHO_SF_WEIGHTS) -> tuple[ExitDynamics, FDFit]:
    d, f = samples.free
    fit = fit_polynomial_robust(d, f, degree)
    crit, over, lock = extract_thresholds(fit, samples)
    dyn = ExitDynamics(samples.exit_id, float(width), tuple(float(c) for c in fit.coeffs),
                       crit, over, lock, rho_sf(crit, over, weights))
    return dyn, fit


@dataclass
class Calibration:
    scenario: str
    exits: list[ExitDynamics]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"scenario": self.scenario, "meta": self.meta,
                           "exits": [e.to_dict() for e in self.exits]}, indent=2, sort_keys=True)


def calibrate_exit(scenario: Scenario, exit_id: int, peak_flow: float, seed: int,
                   config: ProtocolConfig = ProtocolConfig()):
    samples = run_fd_protocol(scenario, exit_id, peak_flow, seed, config)
    width = scenario.exits[exit_id - 1].width
    dyn, fit = dynamics_from_samples(samples, width)
    return samples, fit, dyn


def save_dynamics(path, scenario_name: str, dynamics: list[ExitDynamics], meta: dict | None = None) -> None:
    Path(path).write_text(Calibration(scenario_name, list(dynamics), meta or {}).to_json() + "\n")


def load_dynamics(path) -> list[ExitDynamics]:
    raw = json.loads(Path(path).read_text())
    exits = sorted((ExitDynamics.from_dict(e) for e in raw["exits"]), key=lambda e: e.exit_id)
    return exits


def bundled_dynamics_path(scenario_name: str) -> Path:
    return Path(str(resources.files("cellevac") / "data" / f"{scenario_name}_fd.json"))


def dynamics_for(scenario: Scenario, path=None) -> list[ExitDynamics]:
    """Calibration for ``scenario``: an explicit file, else the bundled one."""
    p = Path(path) if path is not None else bundled_dynamics_path(scenario.name)
    if not p.exists():
        raise FileNotFoundError(
            f"no exit calibration for scenario {scenario.name!r} at {p}; run `cellevac calibrate-fd` first"
        )
    dyn = load_dynamics(p)
    if [d.exit_id for d in dyn] != list(range(1, scenario.n_exits + 1)):
        raise ValueError(f"calibration {p} does not cover exits 1..{scenario.n_exits}")
    return dyn
