import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssbridge.schedule import bridge_coeffs, make_schedule, step_ladder


def test_two_step_schedule_is_flat_and_pinned():
    s = make_schedule(2, beta_max=0.8)
    np.testing.assert_array_equal(s.beta, [0.4, 0.4])
    assert s.sigma_sq[0] == 0.0
    assert s.sigma_bar_sq[2] == 0.0


def test_midpoint_symmetry():
    s = make_schedule(50, beta_max=0.37)
    # independent: sum the tent directly
    tent = [0.37 * (1 - abs(2 * (i + 0.5) / 50 - 1)) for i in range(50)]
    assert abs(sum(tent[:25]) - sum(tent[25:])) < 1e-12
    assert abs(s.sigma_sq[25] - s.sigma_bar_sq[25]) < 1e-12


def test_total_variance_normalisation():
    s = make_schedule(50, total_variance=1.0)
    assert abs(s.sigma_sq[50] - 1.0) < 1e-12


@pytest.mark.parametrize("kwargs", [dict(n_steps=1), dict(n_steps=0), dict(n_steps=10, beta_max=0.0),
                                    dict(n_steps=10, beta_max=-1.0), dict(n_steps=10, total_variance=0.0)])
def test_invalid_arguments(kwargs):
    with pytest.raises(ValueError):
        make_schedule(**kwargs)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 400), total=st.floats(1e-3, 10.0))
def test_schedule_invariants(n, total):
    s = make_schedule(n, total_variance=total)
    assert s.sigma_sq[0] == 0.0 and s.sigma_bar_sq[n] == 0.0
    assert np.all(np.diff(s.sigma_sq) >= 0)
    assert np.all(np.diff(s.sigma_bar_sq) <= 0)
    np.testing.assert_allclose(s.sigma_sq + s.sigma_bar_sq, s.sigma_sq[n], rtol=0, atol=1e-12 * total)
    np.testing.assert_allclose(np.diff(s.sigma_sq), s.beta, rtol=0, atol=1e-12 * total)
    np.testing.assert_array_equal(np.concatenate([[0.0], np.cumsum(s.beta)]), s.sigma_sq)
    np.testing.assert_array_equal(s.beta, s.beta[::-1])


def test_schedule_arrays_are_read_only(unit_schedule):
    with pytest.raises(ValueError):
        unit_schedule.sigma_sq[3] = 1.0


def test_bridge_coeffs_endpoints(unit_schedule):
    c0 = bridge_coeffs(unit_schedule, 0)
    assert (c0.w0, c0.w1, c0.var) == (1.0, 0.0, 0.0)
    cn = bridge_coeffs(unit_schedule, 50)
    assert (cn.w0, cn.w1, cn.var) == (0.0, 1.0, 0.0)


def test_bridge_coeffs_midpoint(unit_schedule):
    c = bridge_coeffs(unit_schedule, 25)
    assert abs(c.w0 - 0.5) < 1e-12 and abs(c.w1 - 0.5) < 1e-12
    assert abs(c.var - 0.25) < 1e-12


@pytest.mark.parametrize("step", [-1, 51])
def test_bridge_coeffs_range(unit_schedule, step):
    with pytest.raises(ValueError):
        bridge_coeffs(unit_schedule, step)


def test_bridge_coeff_properties(unit_schedule):
    s = unit_schedule
    var = []
    for n in range(s.n_steps + 1):
        c = bridge_coeffs(s, n)
        assert abs(c.w0 + c.w1 - 1.0) <= 1e-12
        assert c.var <= min(s.sigma_sq[n], s.sigma_bar_sq[n]) + 1e-15
        var.append(c.var)
    var = np.array(var)
    assert var[0] == 0 and var[-1] == 0 and np.all(var[1:-1] > 0)
    assert np.argmax(var) == 25


@pytest.mark.parametrize("n,nfe", [(50, 50), (50, 1), (50, 7), (1000, 50), (10, 3)])
def test_step_ladder(n, nfe):
    lad = step_ladder(n, nfe)
    assert lad[0] == n and lad[-1] == 0 and len(lad) == nfe + 1
    assert np.all(np.diff(lad) < 0)


def test_step_ladder_rejects_overlong():
    with pytest.raises(ValueError):
        step_ladder(10, 11)
