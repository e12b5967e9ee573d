import math

import numpy as np
import pytest

from gridtie.converter import (
    ConverterParams, ConverterState, IdealSource, Mode, SwitchedConverter, converter_mode_dynamics,
    converter_pwm_transition, duty_cycle, pwm_period_average, reference_voltage,
)
from gridtie.errors import ContractViolation, InvalidParameterError, NoOperatingAgentsError
from gridtie.simcore import Executive, SampleBuffer

P = ConverterParams()
V_PEAK = math.sqrt(2) * 120


def test_duty_cycle_examples():
    assert duty_cycle(18.6, 18.6) == 0.5
    assert duty_cycle(0.0, 18.6) == 0.0
    assert duty_cycle(16.97, 18.6) == pytest.approx(0.4771, abs=1e-4)


@pytest.mark.parametrize("v_sp", [0.0, -1.0])
def test_duty_cycle_rejects_nonpositive_panel(v_sp):
    with pytest.raises(InvalidParameterError):
        duty_cycle(10.0, v_sp)


def test_reference_voltage_examples():
    assert reference_voltage(V_PEAK, 10) == pytest.approx(16.971, abs=1e-3)
    assert reference_voltage(V_PEAK, 1) == V_PEAK
    assert reference_voltage(V_PEAK, 5) == pytest.approx(33.941, abs=1e-3)
    with pytest.raises(NoOperatingAgentsError):
        reference_voltage(V_PEAK, 0)


def test_mode_matrices():
    close = converter_mode_dynamics(Mode.CLOSE, P)
    opened = converter_mode_dynamics(Mode.OPEN, P)
    assert close.B[0] == pytest.approx(25_000)
    assert opened.B == (0.0, 0.0)
    assert opened.A[1][1] == pytest.approx(-4166.7, abs=0.05)
    assert opened.A[0][1] == pytest.approx(-1 / P.L) and opened.A[1][0] == pytest.approx(1 / P.C)
    assert close.A[0] == (0.0, 0.0)


def test_invalid_params_rejected():
    with pytest.raises(InvalidParameterError):
        ConverterParams(L=0.0)


def _state(mode, tau, delta=0.4771, v_ref=16.97):
    return ConverterState(0.0, v_ref, tau, mode, delta, v_ref)


def test_pwm_edges_toggle_and_reset():
    d = 0.4771
    s = converter_pwm_transition(_state(Mode.CLOSE, d * P.T_dc, d), P)
    assert s.mode is Mode.OPEN and s.tau_dc == 0.0
    s = converter_pwm_transition(_state(Mode.OPEN, (1 - d) * P.T_dc, d), P)
    assert s.mode is Mode.CLOSE and s.tau_dc == 0.0


def test_pwm_edge_before_guard_is_contract_violation():
    with pytest.raises(ContractViolation):
        converter_pwm_transition(_state(Mode.CLOSE, 0.1e-6), P)


def test_duty_reread_at_edge():
    s = ConverterState(0.0, 10.0, 0.5 * P.T_dc, Mode.CLOSE, 0.5, 33.94)
    assert converter_pwm_transition(s, P).delta_dc == pytest.approx(duty_cycle(33.94, P.V_sp))


def test_half_duty_phases_last_two_microseconds():
    s = ConverterState(0.0, 18.6, 0.0, Mode.CLOSE, 0.5, 18.6)
    assert s.phase_bound(P.T_dc) == pytest.approx(2e-6)
    assert ConverterState(0.0, 18.6, 0.0, Mode.OPEN, 0.5, 18.6).phase_bound(P.T_dc) == pytest.approx(2e-6)


@pytest.mark.parametrize("v_ref", [4.85, 16.97, 33.94, 169.7])
def test_ccm_conversion_identity(v_ref):
    d = duty_cycle(v_ref, P.V_sp)
    assert d / (1 - d) * P.V_sp == pytest.approx(v_ref, rel=1e-12)


def _run(v_ref, t_end, params=P, **kw):
    ex = Executive()
    buf = SampleBuffer(1, int(round(t_end / 1e-6)), 1e-6)
    conv = SwitchedConverter(1, params, ex, buf, record_edges=True, **kw)
    conv.start(0.0, v_ref)
    ex.advance_to(t_end)
    conv.finalize(t_end)
    return conv, buf


def test_close_entries_are_periodic():
    conv, _ = _run(16.97, 2e-3)
    gaps = np.diff(conv.close_entries)
    np.testing.assert_allclose(gaps, P.T_dc, rtol=0, atol=1e-15)


@pytest.mark.parametrize("n_op", [5, 10, 35])
def test_regulation_after_twenty_milliseconds(n_op):
    v_ref = reference_voltage(V_PEAK, n_op)
    conv, _ = _run(v_ref, 20e-3)
    _, I, V, d = conv.last_close
    avg, _ = pwm_period_average((I, V), P, d)
    assert abs(avg / v_ref - 1) < 0.02


def test_cold_start_reaches_reference():
    v_ref = reference_voltage(V_PEAK, 10)
    conv, buf = _run(v_ref, 20e-3, cold_start=True)
    assert buf.vdc[0, 0] == 0.0
    _, I, V, d = conv.last_close
    assert abs(pwm_period_average((I, V), P, d)[0] / v_ref - 1) < 0.02


def test_period_average_against_dense_sampling():
    conv, _ = _run(16.97, 5e-3)
    _, I, V, d = conv.last_close
    avg, _ = pwm_period_average((I, V), P, d)
    flows = conv.flows
    ts = np.linspace(0, P.T_dc, 40001)
    vals = []
    xm = flows[Mode.CLOSE](I, V, d * P.T_dc)
    for t in ts:
        if t <= d * P.T_dc:
            vals.append(flows[Mode.CLOSE](I, V, t)[1])
        else:
            vals.append(flows[Mode.OPEN](xm[0], xm[1], t - d * P.T_dc)[1])
    assert avg == pytest.approx(np.trapezoid(vals, ts) / P.T_dc, rel=1e-6)


def test_reference_change_latched_at_next_edge():
    ex = Executive()
    buf = SampleBuffer(1, 100, 1e-6)
    conv = SwitchedConverter(1, P, ex, buf)
    conv.start(0.0, 16.97)
    ex.advance_to(1e-6)
    d_before = conv.delta
    conv.set_reference(33.94, 1e-6)
    assert conv.delta == d_before
    ex.advance_to(4e-6)
    assert conv.delta == pytest.approx(duty_cycle(33.94, P.V_sp))


def test_mode_invariant_holds_at_every_edge():
    ex = Executive()
    buf = SampleBuffer(1, 2000, 1e-6)
    conv = SwitchedConverter(1, P, ex, buf)
    conv.start(0.0, 16.97)
    seen = []
    orig = conv._edge

    def spy(t):
        seen.append((conv.mode, t - conv.t_phase, conv.delta))
        orig(t)
        conv._pending.action = spy

    conv._pending.action = spy
    ex.advance_to(2e-3)
    for mode, tau, d in seen:
        bound = d * P.T_dc if mode is Mode.CLOSE else (1 - d) * P.T_dc
        assert tau <= bound + 1e-15


def test_failed_converter_outputs_zero():
    ex = Executive()
    buf = SampleBuffer(1, 100, 1e-6)
    conv = SwitchedConverter(1, P, ex, buf)
    conv.start(0.0, 16.97)
    ex.advance_to(50e-6)
    conv.fail(50e-6)
    ex.advance_to(100e-6)
    conv.finalize(100e-6)
    assert np.all(buf.vdc[0, 50:] == 0.0) and np.all(buf.vdc[0, :50] > 10)


def test_ideal_source_pins_reference():
    ex = Executive()
    buf = SampleBuffer(1, 100, 1e-6)
    src = IdealSource(1, ex, buf)
    src.start(0.0, 16.97)
    src.set_reference(21.2, 40e-6)
    src.finalize(100e-6)
    assert np.all(buf.vdc[0, :40] == 16.97) and np.all(buf.vdc[0, 40:] == 21.2)
