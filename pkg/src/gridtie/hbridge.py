"""H-bridge switching automaton and staircase switching schedules."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ContractViolation, InvalidIdentifierError
from .simcore import TIME_EPS, Executive, SampleBuffer


class Location(enum.Enum):
    ZERO_P = "Zero+"
    POSITIVE = "Positive"
    ZERO_N = "Zero-"
    NEGATIVE = "Negative"


_NEXT = {
    Location.ZERO_P: Location.POSITIVE,
    Location.POSITIVE: Location.ZERO_N,
    Location.ZERO_N: Location.NEGATIVE,
    Location.NEGATIVE: Location.ZERO_P,
}
_POLARITY = {Location.ZERO_P: 0, Location.POSITIVE: 1, Location.ZERO_N: 0, Location.NEGATIVE: -1}


@dataclass(frozen=True)
class SwitchingSchedule:
    """Dwell times of one H-bridge cycle, in seconds.

    ``d_zp`` is the wait before the first positive connection; in steady state
    the Zero+ location lasts ``2 * d_zp`` because the cycle reset rewinds the
    clock to ``-d_zp``.
    """

    d_zp: float
    d_p: float
    d_zn: float
    d_n: float
    T_ac: float

    def thresholds(self) -> tuple[float, float, float, float]:
        """Clock values guarding the exits of Zero+, Positive, Zero- and Negative."""
        a = self.d_zp
        b = a + self.d_p
        c = b + self.d_zn
        return a, b, c, c + self.d_n

    def threshold(self, loc: Location) -> float:
        return self.thresholds()[_ORDER[loc]]


_ORDER = {Location.ZERO_P: 0, Location.POSITIVE: 1, Location.ZERO_N: 2, Location.NEGATIVE: 3}


@dataclass(frozen=True)
class HBridgeState:
    location: Location
    tclock: float
    V_ac: float = 0.0


def switching_schedule(op_id: int, n_op: int, T_ac: float) -> SwitchingSchedule:
    """Quarter-wave-symmetric schedule for the agent ranked ``op_id`` of ``n_op``.

    The agent connects positively when the reference sine crosses
    ``op_id / (n_op + 1)``, stays connected until the mirrored crossing, and
    repeats with reversed polarity in the second half-cycle.
    """
    if not T_ac > 0:
        raise ValueError(f"grid period must be positive, got {T_ac!r}")
    if not 1 <= op_id <= n_op:
        raise InvalidIdentifierError(f"identifier {op_id} outside 1..{n_op}")
    d_zp = T_ac / (2.0 * math.pi) * math.asin(op_id / (n_op + 1))
    d_p = T_ac / 2.0 - 2.0 * d_zp
    return SwitchingSchedule(d_zp=d_zp, d_p=d_p, d_zn=2.0 * d_zp, d_n=d_p, T_ac=T_ac)


def hbridge_transition(s: HBridgeState, sched: SwitchingSchedule, V_dc: float = 0.0) -> HBridgeState:
    threshold = sched.threshold(s.location)
    if s.tclock < threshold - TIME_EPS:
        raise ContractViolation(
            f"guard tclock >= {threshold!r} not satisfied in {s.location.value} (tclock={s.tclock!r})"
        )
    nxt = _NEXT[s.location]
    tclock = -sched.d_zp if s.location is Location.NEGATIVE else s.tclock
    return HBridgeState(nxt, tclock, hbridge_output(nxt, V_dc))


def hbridge_output(location: Location, V_dc: float) -> float:
    return _POLARITY[location] * V_dc


def polarity(location: Location) -> int:
    return _POLARITY[location]


def locate(phase: float, sched: SwitchingSchedule) -> tuple[Location, float]:
    """Map a grid phase in ``[0, T_ac)`` onto the schedule's location and clock."""
    a, b, c, d = sched.thresholds()
    if phase < a:
        return Location.ZERO_P, phase
    if phase < b:
        return Location.POSITIVE, phase
    if phase < c:
        return Location.ZERO_N, phase
    if phase < d:
        return Location.NEGATIVE, phase
    return Location.ZERO_P, phase - sched.T_ac


class HBridge:
    """One agent's H-bridge inside a running simulation.

    Switching instants are computed from the schedule, so the automaton sleeps
    until its next guard becomes true. Its polarity row in the sample buffer
    is filled segment by segment.
    """

    RANK = 2

    def __init__(self, index: int, executive: Executive, buffer: SampleBuffer):
        self.index = index
        self.ex = executive
        self.buf = buffer
        self.row = index - 1
        self.failed = False
        self.sched: SwitchingSchedule | None = None
        self.location = Location.ZERO_P
        self.cycle_start = 0.0
        self.t_seg = 0.0
        self.transitions: list[tuple[float, Location]] = []
        self._pending = None

    def start(self, t: float, sched: SwitchingSchedule) -> None:
        # initial location Zero+ with tclock = 0 at grid phase zero
        self.sched = sched
        self.t_seg = t
        self.adopt(sched, t)

    def _record(self, t_end: float) -> None:
        r = self.buf.span(self.t_seg, t_end)
        self.buf.polarity[self.row, r.start:r.stop] = _POLARITY[self.location]
        self.t_seg = t_end

    def _schedule(self) -> None:
        t_next = self.cycle_start + self.sched.threshold(self.location)
        self._pending = self.ex.schedule(t_next, self.index, self._fire, self.RANK)

    def _fire(self, t: float) -> None:
        self._record(t)
        s = hbridge_transition(HBridgeState(self.location, t - self.cycle_start), self.sched)
        self.location = s.location
        self.cycle_start = t - s.tclock
        self.transitions.append((t, s.location))
        self._schedule()

    def adopt(self, sched: SwitchingSchedule, t: float) -> None:
        """Switch to a new schedule immediately, keeping grid-phase alignment."""
        self._record(t)
        self.ex.cancel(self._pending)
        self.sched = sched
        phase = t - math.floor(t / sched.T_ac) * sched.T_ac
        loc, tclock = locate(phase, sched)
        if loc is not self.location:
            self.transitions.append((t, loc))
        self.location = loc
        self.cycle_start = t - tclock
        self._schedule()

    def fail(self, t: float) -> None:
        # a failed bridge is a short: zero volts from now on
        self._record(t)
        self.ex.cancel(self._pending)
        self.failed = True
        self.location = Location.ZERO_P

    def finalize(self, t_end: float) -> None:
        if not self.failed:
            self._record(t_end)
