"""Buck-boost converter: PWM automaton, mode dynamics and duty-cycle law."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, InvalidParameterError, NoOperatingAgentsError, NumericalBlowupError
from .simcore import TIME_EPS, AffineFlow, AffineMode, Executive, SampleBuffer

# Nominal component values of one inverter module.
NOMINAL_L = 40e-6
NOMINAL_C = 60e-6
NOMINAL_R = 4.0
NOMINAL_T_DC = 4e-6
NOMINAL_V_SP = 18.6


class Mode(enum.Enum):
    OPEN = "open"
    CLOSE = "close"


@dataclass(frozen=True)
class ConverterParams:
    L: float = NOMINAL_L
    C: float = NOMINAL_C
    R: float = NOMINAL_R
    T_dc: float = NOMINAL_T_DC
    V_sp: float = NOMINAL_V_SP

    def __post_init__(self):
        bad = [k for k in ("L", "C", "R", "T_dc", "V_sp")
               if not (math.isfinite(getattr(self, k)) and getattr(self, k) > 0)]
        if bad:
            raise InvalidParameterError(f"converter parameters must be positive and finite: {bad}")


@dataclass(frozen=True)
class ConverterState:
    I_dc: float
    V_dc: float
    tau_dc: float
    mode: Mode
    delta_dc: float
    V_ref: float

    def phase_bound(self, T_dc: float) -> float:
        """Upper bound of ``tau_dc`` imposed by the current location's invariant."""
        if self.mode is Mode.CLOSE:
            return self.delta_dc * T_dc
        return (1.0 - self.delta_dc) * T_dc


def duty_cycle(V_ref: float, V_sp: float) -> float:
    """Switch-closed fraction that makes the ideal CCM output equal ``V_ref``.

    From ``V_out = delta / (1 - delta) * V_sp``; the result lies in ``[0, 1)``.
    """
    if not V_sp > 0:
        raise InvalidParameterError(f"panel voltage must be positive, got {V_sp!r}")
    if V_ref < 0:
        raise InvalidParameterError(f"reference voltage must be non-negative, got {V_ref!r}")
    return V_ref / (V_ref + V_sp)


def reference_voltage(V_peak: float, n_op: int) -> float:
    """Per-module DC reference: the AC peak shared equally among operating modules."""
    if n_op < 1:
        raise NoOperatingAgentsError("no operating agents; the grid-tie must disconnect")
    return V_peak / n_op


def converter_mode_dynamics(mode: Mode, p: ConverterParams) -> AffineMode:
    rc = -1.0 / (p.R * p.C)
    if mode is Mode.OPEN:
        return AffineMode(A=((0.0, -1.0 / p.L), (1.0 / p.C, rc)), B=(0.0, 0.0), input=p.V_sp)
    return AffineMode(A=((0.0, 0.0), (0.0, rc)), B=(1.0 / p.L, 0.0), input=p.V_sp)


def converter_pwm_transition(s: ConverterState, p: ConverterParams) -> ConverterState:
    """Take the enabled PWM edge: toggle the switch, reset the phase timer and
    latch a fresh duty cycle from the current reference."""
    bound = s.phase_bound(p.T_dc)
    if s.tau_dc < bound - TIME_EPS:
        raise ContractViolation(
            f"PWM guard not satisfied in {s.mode.value}: tau={s.tau_dc!r} < {bound!r}"
        )
    nxt = Mode.OPEN if s.mode is Mode.CLOSE else Mode.CLOSE
    return replace(s, mode=nxt, tau_dc=0.0, delta_dc=duty_cycle(s.V_ref, p.V_sp))


def pwm_period_average(x0, p: ConverterParams, delta: float, nodes: int = 16) -> tuple[float, tuple[float, float]]:
    """Exact mean of ``V_dc`` over one PWM period entered in Close at state ``x0``.

    Each phase is smooth, so Gauss-Legendre quadrature on the closed-form
    trajectory is exact to rounding. Returns the mean and the end state.
    """
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    x = (float(x0[0]), float(x0[1]))
    for mode, dur in ((Mode.CLOSE, delta * p.T_dc), (Mode.OPEN, (1.0 - delta) * p.T_dc)):
        if dur <= 0:
            continue
        flow = AffineFlow(converter_mode_dynamics(mode, p))
        for xi, wi in zip(gx, gw):
            total += wi * 0.5 * dur * flow(x[0], x[1], 0.5 * dur * (xi + 1.0))[1]
        x = flow(x[0], x[1], dur)
    return total / p.T_dc, x


class SwitchedConverter:
    """Full-fidelity converter automaton for one agent, driven by the executive.

    The initial location is Open with the capacitor pre-charged to the
    reference (``cold_start`` starts from zero instead).
    """

    RANK = 3

    def __init__(self, index: int, params: ConverterParams, executive: Executive, buffer: SampleBuffer,
                 *, cold_start: bool = False, record_edges: bool = False):
        self.index = index
        self.p = params
        self.ex = executive
        self.buf = buffer
        self.row = index - 1
        self.cold_start = cold_start
        self.flows = {m: AffineFlow(converter_mode_dynamics(m, params)) for m in Mode}
        self.failed = False
        self.close_entries: list[float] | None = [] if record_edges else None
        self.last_close: tuple[float, float, float, float] | None = None
        self._pending = None

    def start(self, t: float, V_ref: float) -> None:
        self.V_ref = V_ref
        self.delta = duty_cycle(V_ref, self.p.V_sp)
        self.mode = Mode.OPEN
        self.I = 0.0
        self.V = 0.0 if self.cold_start else V_ref
        self.t_phase = t
        self._schedule()

    @property
    def state(self) -> ConverterState:
        return ConverterState(self.I, self.V, self.ex.now - self.t_phase, self.mode, self.delta, self.V_ref)

    def state_at(self, t: float) -> tuple[float, float]:
        h = t - self.t_phase
        if h <= 0:
            return self.I, self.V
        return self.flows[self.mode](self.I, self.V, h)

    def set_reference(self, V_ref: float, t: float) -> None:
        # latched at the next PWM edge
        self.V_ref = V_ref

    def _schedule(self):
        dur = self.delta * self.p.T_dc if self.mode is Mode.CLOSE else (1.0 - self.delta) * self.p.T_dc
        self._pending = self.ex.schedule(self.t_phase + dur, self.index, self._edge, self.RANK)

    def _record(self, t_end: float) -> None:
        flow = self.flows[self.mode]
        row = self.buf.vdc[self.row]
        dt = self.buf.dt
        t0, I0, V0 = self.t_phase, self.I, self.V
        for k in self.buf.span(t0, t_end):
            h = k * dt - t0
            row[k] = V0 if h <= 0 else flow(I0, V0, h)[1]

    def _edge(self, t: float) -> None:
        self._record(t)
        h = t - self.t_phase
        if h > 0:
            self.I, self.V = self.flows[self.mode](self.I, self.V, h)
        if not (math.isfinite(self.I) and math.isfinite(self.V)):
            raise NumericalBlowupError(self.index, t)
        s = converter_pwm_transition(
            ConverterState(self.I, self.V, h, self.mode, self.delta, self.V_ref), self.p
        )
        self.mode, self.delta = s.mode, s.delta_dc
        self.t_phase = t
        if self.mode is Mode.CLOSE:
            self.last_close = (t, self.I, self.V, self.delta)
            if self.close_entries is not None:
                self.close_entries.append(t)
        self._schedule()

    def fail(self, t: float) -> None:
        self._record(t)
        self.ex.cancel(self._pending)
        self.failed = True
        self.I = self.V = 0.0
        self.t_phase = t

    def finalize(self, t_end: float) -> None:
        if not self.failed:
            self._record(t_end)


class IdealSource:
    """DC source pinned to its reference, used when converter physics is abstracted."""

    def __init__(self, index: int, executive: Executive, buffer: SampleBuffer):
        self.index = index
        self.ex = executive
        self.buf = buffer
        self.row = index - 1
        self.failed = False
        self.V_ref = self.V = 0.0
        self.t_seg = 0.0

    def start(self, t: float, V_ref: float) -> None:
        self.V_ref = V_ref
        self.V = V_ref
        self.t_seg = t

    def _record(self, t_end):
        r = self.buf.span(self.t_seg, t_end)
        self.buf.vdc[self.row, r.start:r.stop] = self.V
        self.t_seg = t_end

    def set_reference(self, V_ref: float, t: float) -> None:
        if self.failed:
            return
        self._record(t)
        self.V_ref = self.V = V_ref

    def state_at(self, t: float) -> tuple[float, float]:
        return 0.0, self.V

    def fail(self, t: float) -> None:
        self._record(t)
        self.failed = True
        self.V = 0.0

    def finalize(self, t_end: float) -> None:
        self._record(t_end)
