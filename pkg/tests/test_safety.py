import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cellevac.safety import (
    GAMMA, exit_safety, normalize_density, overall_safety, running_safety, safety_report,
)


class Dyn:
    def __init__(self, rho_sf=2.0, rho_lock=4.0):
        self.rho_sf = rho_sf
        self.rho_lock = rho_lock


D = Dyn()
densities = arrays(float, st.integers(1, 60), elements=st.floats(0.0, 6.0))


def test_normalize_examples():
    assert normalize_density(1.0, 2.0, 4.0) == 0.0
    assert normalize_density(2.0, 2.0, 4.0) == 0.0
    assert normalize_density(4.0, 2.0, 4.0) == 1.0
    assert normalize_density(3.0, 2.0, 4.0) == 0.5
    with pytest.raises(ValueError):
        normalize_density(1.0, 4.0, 2.0)


def test_locked_gate_scores_minus_100():
    assert exit_safety(np.full(50, D.rho_lock), D) == -100.0
    for gamma in (0.0, 1.0, 5.0, 20.0):
        assert exit_safety(np.full(7, D.rho_lock), D, gamma) == -100.0


def test_safe_series_scores_zero():
    assert exit_safety([0.0, 1.0, 1.99, 2.0], D) == 0.0


def test_two_sample_case():
    # normalized samples 0 and 1: mean 0.5, population variance 0.25
    assert exit_safety([D.rho_sf, D.rho_lock], D, 5.0) == pytest.approx(-175.0, abs=1e-9)


def test_empty_series_rejected():
    with pytest.raises(ValueError):
        exit_safety([], D)


def test_overall_examples():
    assert overall_safety([-10.0, -30.0]) == pytest.approx((-20.0, 100.0))
    assert overall_safety([-42.0]) == (-42.0, 0.0)
    assert overall_safety([-5.0, -5.0, -5.0])[1] == 0.0
    with pytest.raises(ValueError):
        overall_safety([])


@given(densities, st.floats(0.0, 20.0))
def test_score_bounds(series, gamma):
    s = exit_safety(series, D, gamma)
    assert -(1 + gamma / 4) * 100 - 1e-9 <= s <= 0.0
    assert (s == 0.0) == bool(np.all(series <= D.rho_sf))


@given(arrays(float, st.integers(1, 40), elements=st.floats(2.01, 3.5)), st.floats(0.01, 0.4))
def test_common_raise_strictly_lowers_score(series, delta):
    assert exit_safety(series + delta, D) < exit_safety(series, D)


@given(arrays(float, st.integers(1, 8), elements=st.floats(-225, 0)), st.randoms())
def test_overall_permutation_invariant(scores, rnd):
    perm = list(scores)
    rnd.shuffle(perm)
    a, b = overall_safety(scores), overall_safety(perm)
    assert a[0] == pytest.approx(b[0], abs=1e-9) and a[1] == pytest.approx(b[1], rel=1e-9, abs=1e-9)


def test_report_and_running_score():
    dens = np.array([[1.0, 4.0], [3.0, 4.0], [2.0, 4.0]])
    rep = safety_report(dens, [D, D])
    assert rep.per_exit[1] == -100.0
    assert rep.Sf == pytest.approx(rep.per_exit.mean())
    assert rep.n_samples.tolist() == [3, 3] and rep.gamma == GAMMA
    run = running_safety(dens[:, 0], D)
    assert run[-1] == pytest.approx(rep.per_exit[0])
    assert run[0] == 0.0
    empty = safety_report(np.zeros((0, 2)), [D, D])
    assert empty.Sf == 0.0 and empty.Sf_var == 0.0
    assert set(rep.to_dict()) == {"Sf_j", "Sf", "Sf_var", "gamma", "N_j"}
