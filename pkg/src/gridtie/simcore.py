"""Time-stepping executive for piecewise-affine hybrid automata.

Continuous states are advanced with the exact solution of the active mode's
affine flow; discrete transitions are scheduled events on a single timeline.
Guards in this system are pure clock comparisons, so every event time is
known when the event is scheduled and no zero-crossing detection is needed.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import LivelockError, NumericalBlowupError

# Tolerance (seconds) used when comparing event times against the sample grid.
TIME_EPS = 1e-12


@dataclass(frozen=True)
class AffineMode:
    """One location's flow ``dx/dt = A x + B * input`` on a 2-vector state."""

    A: tuple[tuple[float, float], tuple[float, float]]
    B: tuple[float, float] = (0.0, 0.0)
    input: float = 0.0

    def __post_init__(self):
        vals = [*self.A[0], *self.A[1], *self.B, self.input]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"mode matrices must be finite, got {self!r}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.A, dtype=float)

    @property
    def forcing(self) -> np.ndarray:
        """The constant term ``B * input``."""
        return np.array(self.B, dtype=float) * self.input


@dataclass
class SimClock:
    """Global time plus the uniform sampling step used for trace recording."""

    dt: float = 1e-6
    t: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t < 0:
            raise ValueError("t must be non-negative")

    def sample_time(self, k: int) -> float:
        # k * dt rather than accumulation keeps sample times drift-free.
        return k * self.dt

    def n_samples(self, horizon: float) -> int:
        """Number of samples ``k*dt`` lying in ``[0, horizon)``."""
        return int(math.ceil(horizon / self.dt - 1e-6))

    def first_sample_at_or_after(self, t: float) -> int:
        return max(0, int(math.ceil(t / self.dt - 1e-6)))


def step_affine(x, mode: AffineMode, h: float, *, agent=None, time=None) -> np.ndarray:
    """Exact solution of the mode's affine flow after ``h`` seconds.

    Uses the exponential of the augmented 3x3 matrix ``[[A, b], [0, 0]] * h``,
    which yields both ``exp(A h)`` and the integrated forcing term, including
    for singular ``A``.
    """
    if not h > 0:
        raise ValueError(f"step length must be positive, got {h!r}")
    aug = np.zeros((3, 3))
    aug[:2, :2] = mode.matrix
    aug[:2, 2] = mode.forcing
    phi = expm(aug * h)
    x = np.asarray(x, dtype=float)
    out = phi[:2, :2] @ x + phi[:2, 2]
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError(agent, time, "affine step produced non-finite values")
    return out


class AffineFlow:
    """Fast scalar evaluator of one mode's exact flow.

    ``exp(A h)`` is evaluated with the Cayley-Hamilton form for 2x2 matrices,
    ``exp(mu h) * (c(h) I + s(h) M)`` with ``M = A - mu I`` and ``M^2 = disc I``.
    The forcing term is exact for diagonal ``A``; other cases fall back to
    :func:`step_affine`, memoised per step length.
    """

    __slots__ = ("mode", "mu", "disc", "root", "m", "bu", "diag", "_cache")

    def __init__(self, mode: AffineMode):
        (a, b), (c, d) = mode.A
        self.mode = mode
        self.mu = 0.5 * (a + d)
        self.m = (a - self.mu, b, c, d - self.mu)
        self.disc = self.m[0] * self.m[0] + b * c
        self.root = math.sqrt(abs(self.disc))
        fb = mode.forcing
        self.bu = (float(fb[0]), float(fb[1]))
        self.diag = b == 0.0 and c == 0.0
        self._cache: dict[float, tuple] = {}

    def _cs(self, h):
        z = self.root * h
        if z < 1e-6:
            # series; disc*h^2 is negligible beyond second order here
            dh2 = self.disc * h * h
            return 1.0 + 0.5 * dh2, h * (1.0 + dh2 / 6.0)
        if self.disc < 0:
            return math.cos(z), math.sin(z) / self.root
        return math.cosh(z), math.sinh(z) / self.root

    def __call__(self, x0: float, x1: float, h: float) -> tuple[float, float]:
        if h == 0.0:
            return x0, x1
        bu0, bu1 = self.bu
        if self.diag:
            (a, _), (_, d) = self.mode.A
            return _decay(x0, a, bu0, h), _decay(x1, d, bu1, h)
        if bu0 != 0.0 or bu1 != 0.0:
            hit = self._cache.get(h)
            if hit is None:
                if len(self._cache) > 4096:
                    self._cache.clear()
                hit = self._cache[h] = _affine_map(self.mode, h)
            p, q = hit
            return p[0] * x0 + p[1] * x1 + q[0], p[2] * x0 + p[3] * x1 + q[1]
        c, s = self._cs(h)
        g = math.exp(self.mu * h)
        m0, m1, m2, m3 = self.m
        return (
            g * ((c + s * m0) * x0 + s * m1 * x1),
            g * (s * m2 * x0 + (c + s * m3) * x1),
        )


def _decay(x, a, f, h):
    """Solution of the scalar ODE ``x' = a x + f`` after time ``h``."""
    if a == 0.0 or h == 0.0:
        return x + f * h
    ah = a * h
    return x * math.exp(ah) + f * h * (math.expm1(ah) / ah)


def _affine_map(mode, h):
    aug = np.zeros((3, 3))
    aug[:2, :2] = mode.matrix
    aug[:2, 2] = mode.forcing
    phi = expm(aug * h)
    return tuple(phi[:2, :2].ravel()), tuple(phi[:2, 2])


class SampleBuffer:
    """Per-agent sample storage on the uniform grid ``t_k = k * dt``.

    Automata write their own rows as they leave each segment of constant
    location, so a sample at exactly an event time sees the post-event state.
    """

    def __init__(self, n_agents: int, n_samples: int, dt: float):
        self.dt = dt
        self.n_samples = n_samples
        self.vdc = np.zeros((n_agents, n_samples))
        self.polarity = np.zeros((n_agents, n_samples), dtype=np.int8)

    def span(self, t_a: float, t_b: float) -> range:
        """Sample indices ``k`` with ``t_a <= k*dt < t_b``."""
        n = self.n_samples
        k0 = min(n, max(0, math.ceil(t_a / self.dt - 1e-6)))
        k1 = min(n, max(0, math.ceil(t_b / self.dt - 1e-6)))
        return range(k0, k1)

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt


@dataclass(order=True)
class _Entry:
    t: float
    agent: int
    rank: int
    seq: int
    action: Callable[[float], None] = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class Executive:
    """Deterministic discrete-event scheduler.

    Events are ordered by time, then agent index (lower first), then a
    per-agent component rank, then insertion order.
    """

    def __init__(self, clock: SimClock | None = None, *, max_events_per_instant: int = 1_000_000,
                 log_events: bool = False):
        self.clock = clock or SimClock()
        self._heap: list[_Entry] = []
        self._seq = itertools.count()
        self.max_events_per_instant = max_events_per_instant
        self.events_processed = 0
        self.log: list[tuple[float, int, int]] | None = [] if log_events else None

    @property
    def now(self) -> float:
        return self.clock.t

    def schedule(self, t: float, agent: int, action: Callable[[float], None], rank: int = 0) -> _Entry:
        if t < self.clock.t - TIME_EPS:
            raise ValueError(f"cannot schedule at t={t!r} before now={self.clock.t!r}")
        entry = _Entry(max(t, self.clock.t), agent, rank, next(self._seq), action)
        heapq.heappush(self._heap, entry)
        return entry

    @staticmethod
    def cancel(entry: _Entry | None) -> None:
        if entry is not None:
            entry.cancelled = True

    def next_time(self) -> float:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0].t if self._heap else math.inf

    def advance_to(self, t_target: float) -> None:
        """Process every pending event with time ``<= t_target``, in order."""
        if t_target < self.clock.t:
            raise ValueError(f"t_target={t_target!r} is before now={self.clock.t!r}")
        heap = self._heap
        same_instant = 0
        last_t = None
        while heap and heap[0].t <= t_target:
            entry = heapq.heappop(heap)
            if entry.cancelled:
                continue
            if entry.t == last_t:
                same_instant += 1
                if same_instant > self.max_events_per_instant:
                    raise LivelockError(
                        f"more than {self.max_events_per_instant} events at t={entry.t!r} without progress"
                    )
            else:
                same_instant = 0
                last_t = entry.t
            self.clock.t = entry.t
            self.events_processed += 1
            if self.log is not None:
                self.log.append((entry.t, entry.agent, entry.rank))
            entry.action(entry.t)
        self.clock.t = t_target
