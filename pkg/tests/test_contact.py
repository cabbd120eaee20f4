import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from legged_est import contact


def test_lpf_first_call_passes_through():
    s, y = contact.lpf_step(contact.LpfState(10.0), [0.3, -2.0], 1e-3)
    assert np.array_equal(y, [0.3, -2.0]) and s.initialized


def test_lpf_dc_gain_one():
    s = contact.LpfState(10.0)
    s, _ = contact.lpf_step(s, 0.0, 1e-3)
    t = 0.0
    while t < 5 * s.tau:
        s, y = contact.lpf_step(s, 1.0, 1e-3)
        t += 1e-3
    assert abs(1.0 - y) < 0.01


@pytest.mark.parametrize("fc, dt", [(10.0, 1e-3), (40.0, 1e-4)])
def test_lpf_step_response_at_tau(fc, dt):
    tau = 1 / (2 * np.pi * fc)
    s, _ = contact.lpf_step(contact.LpfState(fc), 0.0, dt)
    ys = []
    for _ in range(int(5 * tau / dt) + 2):
        s, y = contact.lpf_step(s, 1.0, dt)
        ys.append(float(y))
    # output after k steps is 1 - (1 - alpha)^k; interpolate at t = tau
    times = dt * np.arange(1, len(ys) + 1)
    y_tau = np.interp(tau, times, ys)
    assert abs(y_tau - (1 - np.exp(-1))) / (1 - np.exp(-1)) < 0.02


def test_lpf_rejects_bad_args():
    with pytest.raises(ValueError):
        contact.LpfState(0.0)
    with pytest.raises(ValueError):
        contact.lpf_step(contact.LpfState(1.0), 1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(1e-4, 0.05), st.floats(0.1, 100))
def test_lpf_convex_combination(xs, dt, fc):
    s = contact.LpfState(fc)
    for k, x in enumerate(xs):
        s, y = contact.lpf_step(s, x, dt)
        assert min(xs[: k + 1]) - 1e-9 <= y <= max(xs[: k + 1]) + 1e-9


def test_nmn_threshold():
    assert contact.nmn_contact([0.49, 0.5, 1.0, 0.0]).tolist() == [False, True, True, False]


def test_grf_threshold():
    dt = 2e-3
    assert not contact.grf_contact(np.full(200, 39.0), dt)
    assert contact.grf_contact(np.full(200, 41.0), dt)


def test_grf_step_crossing_time():
    dt = 1e-4
    tau = 1 / (2 * np.pi * 10.0)
    force = np.r_[0.0, np.full(2000, 80.0)]
    filtered = contact.lpf_filter(force, dt, 10.0)
    k = int(np.argmax(filtered >= 40.0))
    assert abs(k * dt - tau * np.log(2)) < 2 * dt
    assert not contact.grf_contact(force[:k], dt)
    assert contact.grf_contact(force[: k + 1], dt)


def test_velocity_gate():
    assert not contact.velocity_gate([0.09, 0, 0])
    assert contact.velocity_gate([0.0, 0.11, 0])
    assert not contact.velocity_gate(np.zeros(3))


def test_slip_reject():
    assert contact.slip_reject([0.39, 0, 0], 1e-4) == 1e-4
    assert contact.slip_reject([0.3, 0.4, 0], 1e-4) == pytest.approx(1e-3)
    assert contact.slip_reject(np.zeros(3), 1e-4) == 1e-4


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(1e-8, 1.0))
def test_slip_reject_monotone(v, base):
    assert contact.slip_reject(v, base) >= base


def test_contact_decision_slip_requires_contact():
    d = contact.ContactDecision([True, False, True, False], ["nmn"] * 4, [True, True, False, False])
    assert d.slip.tolist() == [True, False, False, False]
