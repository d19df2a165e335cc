"""Exit-gate safety scores from density time series.

Densities are clamp-normalized between the safety threshold and the lock
density, so 0 means "at or below the safe level" and 1 means "as dense as a
locked gate". The per-exit score penalizes both the time-mean and the
time-variance of the normalized series:

    Sf_j = -(mean + gamma * var) * 100

so a permanently locked gate scores -100 and a gate that never exceeds the
safe density scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = 5.0


@dataclass(frozen=True)
class SafetyReport:
    per_exit: np.ndarray     # Sf_j
    Sf: float
    Sf_var: float
    gamma: float
    n_samples: np.ndarray    # N_j

    def to_dict(self) -> dict:
        return {
            "Sf_j": [float(v) for v in self.per_exit],
            "Sf": float(self.Sf),
            "Sf_var": float(self.Sf_var),
            "gamma": float(self.gamma),
            "N_j": [int(n) for n in self.n_samples],
        }


def normalize_density(rho, rho_sf: float, rho_lock: float):
    """``(max(rho, rho_sf) - rho_sf) / (rho_lock - rho_sf)``, capped at 1.

    The cap keeps densities measured beyond the lock plateau from scoring
    worse than a locked gate.
    """
    if not rho_sf < rho_lock:
        raise ValueError(f"need rho_sf < rho_lock, got {rho_sf} >= {rho_lock}")
    rho = np.asarray(rho, dtype=float)
    x = (np.maximum(rho, rho_sf) - rho_sf) / (rho_lock - rho_sf)
    x = np.minimum(x, 1.0)
    return float(x) if x.ndim == 0 else x


def exit_safety(series, dynamics, gamma: float = GAMMA) -> float:
    """Safety score of one exit from its density series (population variance)."""
    rho = np.asarray(series, dtype=float).reshape(-1)
    if rho.size == 0:
        raise ValueError("exit_safety needs at least one density sample")
    x = normalize_density(rho, dynamics.rho_sf, dynamics.rho_lock)
    x = np.atleast_1d(x)
    mean = x.mean()
    var = np.mean((x - mean) ** 2)
    return float((-mean - gamma * var) * 100.0) + 0.0  # no negative zero


def overall_safety(per_exit) -> tuple[float, float]:
    """Mean and population variance of the per-exit scores."""
    s = np.asarray(per_exit, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("overall_safety needs at least one exit")
    m = s.mean()
    return float(m), float(np.mean((s - m) ** 2))


def safety_report(density: np.ndarray, dynamics, gamma: float = GAMMA) -> SafetyReport:
    """Report for a ``(T, E)`` density matrix; an empty series scores 0 (nothing unsafe observed)."""
    density = np.asarray(density, dtype=float)
    n_exits = len(dynamics)
    if density.size == 0:
        per = np.zeros(n_exits)
        n = np.zeros(n_exits, dtype=np.int64)
    else:
        density = density.reshape(-1, n_exits)
        per = np.array([exit_safety(density[:, j], dynamics[j], gamma) for j in range(n_exits)])
        n = np.full(n_exits, density.shape[0], dtype=np.int64)
    sf, var = overall_safety(per)
    return SafetyReport(per, sf, var, gamma, n)


def running_safety(series, dynamics, gamma: float = GAMMA) -> np.ndarray:
    """Sf_j evaluated on every prefix of the series (for export)."""
    x = np.atleast_1d(normalize_density(np.asarray(series, float), dynamics.rho_sf, dynamics.rho_lock))
    if x.size == 0:
        return x
    k = np.arange(1, x.size + 1)
    mean = np.cumsum(x) / k
    var = np.maximum(np.cumsum(x * x) / k - mean * mean, 0.0)
    return (-mean - gamma * var) * 100.0
