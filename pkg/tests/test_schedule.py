import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from regione.errors import AlreadyTerminalError, InvalidArgumentError
from regione.models import AnalyticField, analytic_velocity
from regione.schedule import (
    LatentState,
    TimestepSchedule,
    euler_step,
    interpolate,
    make_schedule,
    one_step_estimate,
)


def test_uniform_points():
    assert make_schedule(4).points == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert make_schedule(1).points == (0.0, 1.0)
    s = make_schedule(28)
    assert len(s) == 29 and s.T == 28
    assert s[14] == 0.5


@pytest.mark.parametrize("T", [0, -3, 2.5])
def test_bad_T(T):
    with pytest.raises(InvalidArgumentError):
        make_schedule(T)


def test_shifted_formula():
    s = make_schedule(16, "shifted", 3.0)
    for i, t in enumerate(s.points):
        u = i / 16
        assert t == pytest.approx(3 * u / (1 + 2 * u), abs=1e-15)
    assert make_schedule(16, "shifted", 1.0).points == make_schedule(16).points


@pytest.mark.parametrize("sched", [make_schedule(28), make_schedule(16, "shifted", 3.0), make_schedule(7, "shifted", 0.4)])
def test_monotone_and_dt_sum(sched):
    pts = np.array(sched.points)
    assert np.all(np.diff(pts) > 0)
    total = sum(sched.dt(i, i - 1) for i in range(1, sched.T + 1))
    assert abs(total - 1.0) <= 1e-12


def test_schedule_validation():
    with pytest.raises(InvalidArgumentError):
        TimestepSchedule((0.0, 0.5, 0.5, 1.0))
    with pytest.raises(InvalidArgumentError):
        TimestepSchedule((0.1, 1.0))


def test_interpolate_examples(rng):
    x0 = rng.standard_normal((3, 4)).astype(np.float32)
    x1 = rng.standard_normal((3, 4)).astype(np.float32)
    np.testing.assert_array_equal(interpolate(x0, x1, 0.0), x0)
    np.testing.assert_array_equal(interpolate(x0, x1, 1.0), x1)
    assert interpolate(np.zeros(1), np.full(1, 2.0), 0.25)[0] == 0.5
    with pytest.raises(InvalidArgumentError):
        interpolate(x0, x1[:2], 0.5)


def test_euler_examples():
    s = TimestepSchedule((0.0, 0.9, 1.0))
    out = euler_step(LatentState(np.array([1.0], np.float32), 2), np.array([0.5], np.float32), s)
    assert out.step_index == 1
    assert out.data[0] == pytest.approx(0.95, abs=1e-7)
    x = np.arange(4, dtype=np.float32)
    assert np.array_equal(euler_step(LatentState(x, 2), np.zeros(4), s).data, x)


def test_euler_terminal_and_shape():
    s = make_schedule(4)
    with pytest.raises(AlreadyTerminalError):
        euler_step(LatentState(np.zeros(2, np.float32), 0), np.zeros(2), s)
    with pytest.raises(InvalidArgumentError):
        euler_step(LatentState(np.zeros(2, np.float32), 2), np.zeros(3), s)


def test_constant_field_telescopes_and_tracks_interpolation(rng):
    x0 = rng.standard_normal((5, 8)).astype(np.float32)
    x1 = rng.standard_normal((5, 8)).astype(np.float32)
    s = make_schedule(10)
    v = x1 - x0
    state = LatentState(x1.copy(), 10)
    while state.step_index > 0:
        state = euler_step(state, v, s)
        np.testing.assert_allclose(state.data, interpolate(x0, x1, s[state.step_index]), atol=1e-6)
    np.testing.assert_allclose(state.data, x0, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 40), i=st.integers(1, 40), seed=st.integers(0, 2**16))
def test_one_step_to_next_is_euler_bitwise(T, i, seed):
    i = min(i, T)
    s = make_schedule(T)
    r = np.random.default_rng(seed)
    x = r.standard_normal((4, 3)).astype(np.float32)
    v = r.standard_normal((4, 3)).astype(np.float32)
    state = LatentState(x, i)
    assert np.array_equal(one_step_estimate(state, v, i - 1, s), euler_step(state, v, s).data)


def test_one_step_identity_and_errors(rng):
    s = make_schedule(8)
    x = rng.standard_normal((2, 2)).astype(np.float32)
    state = LatentState(x, 5)
    assert np.array_equal(one_step_estimate(state, np.ones_like(x), 5, s), x)
    with pytest.raises(InvalidArgumentError):
        one_step_estimate(state, np.ones_like(x), 6, s)
    with pytest.raises(InvalidArgumentError):
        one_step_estimate(state, np.ones_like(x), -1, s)
    # input state untouched
    assert np.array_equal(state.data, x)


def test_one_step_exact_on_straight_field(rng):
    x0 = rng.standard_normal((6, 4))
    x1 = rng.standard_normal((6, 4))
    field = AnalyticField.straight(x0, x1)
    s = make_schedule(28)
    for i in (1, 7, 22, 28):
        xi = field.position(s[i]).astype(np.float32)
        est = one_step_estimate(LatentState(xi, i), analytic_velocity(field, s[i]), 0, s)
        assert np.max(np.abs(est - x0)) <= 1e-6


def test_one_step_gap_on_curved_field(rng):
    # closed-form gap of the straight-line extrapolation from a Bezier point
    t, a, c, b = sp.symbols("t a c b")
    pos = (1 - t) ** 2 * a + 2 * t * (1 - t) * c + t**2 * b
    gap = sp.lambdify((t, a, c, b), sp.expand(pos - t * sp.diff(pos, t) - a))

    x0 = rng.standard_normal((5, 3))
    x1 = rng.standard_normal((5, 3))
    ctrl = 0.5 * (x0 + x1) + rng.uniform(-1, 1, (5, 3))
    field = AnalyticField(x0, x1, ctrl, np.ones(5, bool))
    s = make_schedule(10)
    xi = field.position(0.8).astype(np.float32)
    est = one_step_estimate(LatentState(xi, 8), analytic_velocity(field, 0.8), 0, s)
    np.testing.assert_allclose(est - x0, gap(0.8, x0, ctrl, x1), atol=1e-5)
