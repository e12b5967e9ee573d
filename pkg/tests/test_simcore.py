import math

import numpy as np
import pytest

from gridtie.converter import ConverterParams, Mode, SwitchedConverter, converter_mode_dynamics
from gridtie.errors import LivelockError, NumericalBlowupError
from gridtie.simcore import AffineFlow, AffineMode, Executive, SampleBuffer, SimClock, step_affine

from oracles import rk4

P = ConverterParams()


def test_zero_dynamics_fix_every_point():
    out = step_affine((1.0, 2.0), AffineMode(((0, 0), (0, 0))), 0.37)
    assert tuple(out) == (1.0, 2.0)


def test_close_mode_current_ramp():
    out = step_affine((0.0, 0.0), converter_mode_dynamics(Mode.CLOSE, P), 1e-6)
    assert out[0] == pytest.approx(0.465, rel=1e-12)


def test_close_mode_voltage_decay():
    out = step_affine((0.0, 10.0), converter_mode_dynamics(Mode.CLOSE, P), 240e-6)
    assert out[1] == pytest.approx(10 * math.exp(-1), rel=1e-12)
    assert out[1] == pytest.approx(3.6788, abs=1e-4)


@pytest.mark.parametrize("mode", list(Mode))
def test_halving_composes_exactly(mode):
    m = converter_mode_dynamics(mode, P)
    x0 = np.array([1.3, 17.0])
    h = 3e-6
    whole = step_affine(x0, m, h)
    halves = step_affine(step_affine(x0, m, h / 2), m, h / 2)
    np.testing.assert_allclose(halves, whole, rtol=1e-12)


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("h", [1e-9, 2e-7, 1.7e-6, 4e-6, 1e-3])
def test_step_matches_independent_integrator(mode, h):
    m = converter_mode_dynamics(mode, P)
    A, b = m.matrix, m.forcing
    ref = rk4(lambda x: A @ x + b, (0.7, 12.0), h, max(2000, int(h / 5e-8)))
    np.testing.assert_allclose(step_affine((0.7, 12.0), m, h), ref, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("h", [1e-10, 3e-7, 2.2e-6, 4e-6, 5e-4])
def test_fast_flow_agrees_with_matrix_exponential(mode, h):
    m = converter_mode_dynamics(mode, P)
    fast = AffineFlow(m)(0.7, 12.0, h)
    np.testing.assert_allclose(fast, step_affine((0.7, 12.0), m, h), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("mode", list(Mode))
def test_fast_flow_zero_step_is_identity(mode):
    assert AffineFlow(converter_mode_dynamics(mode, P))(0.7, 12.0, 0.0) == (0.7, 12.0)


def test_fast_flow_general_forced_mode_falls_back():
    m = AffineMode(((-1.0, 2.0), (-3.0, -0.5)), (1.0, 0.5), 2.0)
    np.testing.assert_allclose(AffineFlow(m)(1.0, -1.0, 0.3), step_affine((1.0, -1.0), m, 0.3), rtol=1e-12)


def test_nonpositive_step_rejected():
    with pytest.raises(ValueError):
        step_affine((0, 0), AffineMode(((0, 0), (0, 0))), 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reports_agent_and_time():
    m = AffineMode(((800.0, 0.0), (0.0, 0.0)))
    with pytest.raises(NumericalBlowupError) as ei:
        step_affine((1.0, 0.0), m, 10.0, agent=4, time=0.25)
    assert ei.value.agent == 4 and ei.value.time == 0.25


def test_non_finite_mode_rejected():
    with pytest.raises(ValueError):
        AffineMode(((math.nan, 0), (0, 0)))


def test_sample_times_are_integer_multiples():
    c = SimClock(1e-6)
    ts = np.array([c.sample_time(k) for k in range(20000)])
    assert np.all(np.diff(ts) > 0)
    assert c.sample_time(16667) == 16667 * 1e-6
    assert c.n_samples(2 / 60) == 33334


def test_advance_to_now_is_a_noop():
    ex = Executive()
    fired = []
    ex.schedule(1e-3, 1, fired.append)
    ex.advance_to(0.0)
    assert fired == [] and ex.now == 0.0 and ex.events_processed == 0


def test_one_pwm_period_has_exactly_two_edges():
    ex = Executive()
    buf = SampleBuffer(1, 10, 1e-6)
    conv = SwitchedConverter(1, P, ex, buf)
    conv.start(0.0, 16.97)
    ex.advance_to(P.T_dc)
    assert ex.events_processed == 2
    assert conv.mode is Mode.OPEN


def test_equal_times_processed_by_agent_index():
    ex = Executive(log_events=True)
    order = []
    ex.schedule(1e-6, 2, lambda t: order.append(2))
    ex.schedule(1e-6, 1, lambda t: order.append(1))
    ex.advance_to(1e-6)
    assert order == [1, 2]


def test_cancelled_events_do_not_fire():
    ex = Executive()
    fired = []
    e = ex.schedule(1e-6, 1, fired.append)
    ex.cancel(e)
    ex.advance_to(1e-5)
    assert fired == [] and ex.next_time() == math.inf


def test_scheduling_in_the_past_rejected():
    ex = Executive()
    ex.advance_to(1.0)
    with pytest.raises(ValueError):
        ex.schedule(0.5, 1, lambda t: None)


def test_self_rescheduling_at_same_instant_is_livelock():
    ex = Executive(max_events_per_instant=100)

    def again(t):
        ex.schedule(t, 1, again)

    ex.schedule(0.0, 1, again)
    with pytest.raises(LivelockError):
        ex.advance_to(1.0)
