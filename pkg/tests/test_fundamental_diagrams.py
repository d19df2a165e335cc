import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.polynomial import polynomial as P

from cellevac.fundamental_diagrams import (
    ExitDynamics, FDSampleSet, FitError, ProtocolConfig, ThresholdError, dynamics_for,
    expected_injections, extract_thresholds, first_local_maximum, fit_polynomial_robust,
    load_dynamics, rho_sf, run_fd_protocol, save_dynamics, triangular_rate,
)

SHORT = ProtocolConfig(horizon=400.0, cycles=1, cycle_length=300.0, lock_at=200.0)
TRUE = np.array([0.0, 1.8, -0.2, 0.05, -0.03, 0.004, -0.0002])


def test_noiseless_degree_six_recovered():
    x = np.linspace(0.0, 4.0, 400)
    fit = fit_polynomial_robust(x, P.polyval(x, TRUE))
    assert np.max(np.abs(fit.coeffs - TRUE)) < 1e-6


def test_constant_flow_gives_degree_zero_fit():
    x = np.linspace(0.1, 3.5, 300)
    fit = fit_polynomial_robust(x, np.full_like(x, 1.7))
    assert fit.coeffs[0] == pytest.approx(1.7, abs=1e-8)
    assert np.max(np.abs(fit.coeffs[1:])) < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_bisquare_beats_ols_under_outliers(seed):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 4.0, 600))
    y = P.polyval(x, TRUE) + rng.normal(0, 0.05, x.size)
    bad = rng.choice(x.size, size=x.size // 20, replace=False)
    y[bad] += rng.uniform(2.0, 5.0, bad.size)
    grid = np.linspace(0.0, 4.0, 200)
    truth = P.polyval(grid, TRUE)
    robust = fit_polynomial_robust(x, y)
    ols = fit_polynomial_robust(x, y, robust=False)
    assert robust.converged
    assert np.max(np.abs(robust(grid) - truth)) < np.max(np.abs(ols(grid) - truth))
    assert np.all(robust.weights[bad] < 0.5)


def test_confidence_band_covers_fit():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 4, 400)
    fit = fit_polynomial_robust(x, P.polyval(x, TRUE) + rng.normal(0, 0.1, x.size))
    g = np.linspace(0.2, 3.8, 50)
    lo, hi = fit.band(g, 0.90)
    assert np.all(lo < fit(g)) and np.all(fit(g) < hi)
    lo99, hi99 = fit.band(g, 0.99)
    assert np.all(hi99 - lo99 > hi - lo)


def test_degenerate_support_rejected():
    with pytest.raises(FitError):
        fit_polynomial_robust(np.ones(100), np.ones(100))


def synthetic_samples(rng, peak=2.0, n=1200, n_lock=100):
    """Unimodal flow(rho) = q_max * (rho/peak) * (2 - rho/peak) * 1.5, with a congested cloud."""
    free = rng.uniform(0.0, 2.6, n)
    over = rng.normal(2.75, 0.04, n // 3)
    d = np.concatenate([free, over])
    f = 3.0 * (d / peak) * (2.0 - d / peak) + rng.normal(0, 0.02, d.size)
    lock_d = np.linspace(3.0, 3.4, n_lock)
    dens = np.concatenate([d, lock_d])
    flow = np.concatenate([np.maximum(f, 0), np.zeros(n_lock)])
    mask = np.r_[np.zeros(d.size, bool), np.ones(n_lock, bool)]
    return FDSampleSet(1, np.arange(dens.size) * 2.0, dens, flow, mask)


def test_analytic_peak_recovered():
    s = synthetic_samples(np.random.default_rng(3))
    d, f = s.free
    fit = fit_polynomial_robust(d, f)
    crit, over, lock = extract_thresholds(fit, s)
    assert crit == pytest.approx(2.0, abs=0.05)
    assert crit < over < lock
    assert over == pytest.approx(2.75, abs=0.1)
    assert lock == pytest.approx(np.percentile(np.linspace(3.0, 3.4, 100), 95))


def test_no_maximum_raises():
    with pytest.raises(ThresholdError):
        first_local_maximum(np.array([0.0, 1.0]), 0.0, 5.0)


def test_missing_lock_phase_raises():
    s = synthetic_samples(np.random.default_rng(0), n_lock=0)
    d, f = s.free
    with pytest.raises(ThresholdError):
        extract_thresholds(fit_polynomial_robust(d, f), s)


def test_rho_sf_examples():
    assert rho_sf(1.0, 2.0) == pytest.approx(1.1)
    assert rho_sf(3.0, 3.0 + 1e-3) == pytest.approx(3.0 + 1e-4)
    with pytest.raises(ValueError):
        rho_sf(2.0, 1.0)


@given(st.floats(0.1, 5.0), st.floats(1e-3, 5.0))
def test_rho_sf_is_strictly_between(crit, gap):
    over = crit + gap
    assert crit < rho_sf(crit, over) < over


def test_exit_dynamics_invariants():
    with pytest.raises(ThresholdError):
        ExitDynamics(1, 2.0, (0,) * 7, 2.0, 1.5, 3.0, 1.8)
    with pytest.raises(ThresholdError):
        ExitDynamics(1, 2.0, (0,) * 7, 1.0, 2.0, 3.0, 2.5)


def test_triangular_schedule():
    assert triangular_rate(450.0, 8.0, 900.0, 4) == pytest.approx(8.0)
    assert triangular_rate(0.0, 8.0, 900.0, 4) == 0.0
    assert triangular_rate(3600.0, 8.0, 900.0, 4) == 0.0
    cfg = ProtocolConfig()
    # four triangles of base 900 s and height 8 peds/s
    assert expected_injections(8.0, cfg) == pytest.approx(4 * 0.5 * 900 * 8.0)


@pytest.fixture(scope="module")
def short_run(desk):
    return run_fd_protocol(desk, 2, 6.0, 0, SHORT)


def test_protocol_sample_cadence(short_run):
    assert len(short_run) == 200
    assert np.allclose(np.diff(short_run.time), 2.0)
    assert short_run.lock_mask.sum() == 100
    assert np.all(short_run.density >= 0) and np.all(short_run.flow >= 0)


def test_full_protocol_emits_1800_samples():
    cfg = ProtocolConfig()
    assert int(round(cfg.horizon / cfg.sample_interval)) == 1800
    assert cfg.lock_at == 3000.0 and cfg.cycles * cfg.cycle_length <= cfg.horizon


def test_lock_phase_has_no_flow_and_accumulates(short_run):
    m = short_run.lock_mask
    assert np.all(short_run.flow[m] == 0.0)
    d = short_run.density[m]
    # four-cell counts jitter as bodies shuffle, so check the accumulation trend
    half = len(d) // 2
    assert d[half:].mean() > d[:half].mean()
    assert d[-1] > d[0]
    assert d.max() > short_run.density[~m].max()


def test_injection_total_within_poisson_band(short_run):
    mu = short_run.expected_injected
    assert mu == pytest.approx(900.0)
    assert abs(short_run.injected - mu) <= 3 * np.sqrt(mu)


def test_sub_capacity_stays_free_flow(desk):
    s = run_fd_protocol(desk, 2, 1.0, 0, SHORT)
    crit = dynamics_for(desk)[1].rho_crit
    assert s.density[~s.lock_mask].max() < crit


def test_protocol_deterministic(desk, short_run):
    again = run_fd_protocol(desk, 2, 6.0, 0, SHORT)
    assert np.array_equal(again.density, short_run.density) and np.array_equal(again.flow, short_run.flow)


def test_bundled_desk_calibration(desk, tmp_path):
    dyn = dynamics_for(desk)
    assert [d.exit_id for d in dyn] == [1, 2, 3, 4]
    for d in dyn:
        assert d.rho_crit < d.rho_sf < d.rho_over < d.rho_lock
        assert d.rho_sf == pytest.approx(0.9 * d.rho_crit + 0.1 * d.rho_over)
    # the wide corner gate passes more people per second than the narrow gate
    cap = {d.exit_id: d.flow_at(d.rho_crit) for d in dyn}
    assert cap[4] > cap[1]
    p = tmp_path / "fd.json"
    save_dynamics(p, "desk", dyn)
    assert load_dynamics(p) == dyn


def test_missing_calibration_reported(desk, tmp_path):
    with pytest.raises(FileNotFoundError):
        dynamics_for(desk, tmp_path / "nothing.json")


def test_bundled_arena_calibration(arena):
    dyn = dynamics_for(arena)
    assert [d.exit_id for d in dyn] == list(range(1, 9))
    assert all(d.rho_crit < d.rho_sf < d.rho_over < d.rho_lock for d in dyn)
    assert dyn[7].flow_at(dyn[7].rho_crit) > dyn[0].flow_at(dyn[0].rho_crit)   # 6 m gate vs 3 m
