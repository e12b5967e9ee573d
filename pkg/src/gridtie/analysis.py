"""Harmonic analysis of simulated grid voltages and Monte Carlo aggregation.

THD here is the RMS of harmonics ``2..H`` over the fundamental, taken from
Fourier coefficients over a rectangular window spanning whole periods of
the fundamental. The sampled signal is integrated with the trapezoid rule,
interpolating linearly at window edges that fall between samples, so a
window need not contain an integer number of samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .array import WaveformTrace, build_array, reconfiguration_latency, simulate
from .errors import DegenerateSignalError, WindowError
from .scenario import ArrayScenario, FaultEvent, FaultKind

DEFAULT_HARMONICS = 50
Z95 = 1.959963984540054


@dataclass
class THDReport:
    thd: float
    fundamental_rms: float
    harmonics_used: int
    window: tuple[float, float]
    spectrum: np.ndarray = field(repr=False)

    @property
    def thd_percent(self) -> float:
        return 100.0 * self.thd


def _window_geometry(n, dt, t_offset, starts, length):
    eps = 1e-6
    rel_a = (np.asarray(starts, dtype=float) - t_offset) / dt
    rel_b = rel_a + length / dt
    ka = np.ceil(rel_a - eps).astype(np.int64)
    kb = np.floor(rel_b + eps).astype(np.int64)
    frac_a = np.clip(ka - rel_a, 0.0, None)
    frac_b = np.clip(rel_b - kb, 0.0, None)
    frac_a[frac_a < eps] = 0.0
    frac_b[frac_b < eps] = 0.0
    lo = ka - (frac_a > 0)
    hi = kb + (frac_b > 0)
    if np.any(lo < 0) or np.any(hi > n - 1) or np.any(kb < ka):
        raise WindowError("window extends beyond the recorded samples")
    return ka, kb, frac_a, frac_b


def harmonic_amplitudes(v: np.ndarray, dt: float, f0: float, harmonics: int, starts, length: float,
                        t_offset: float = 0.0) -> np.ndarray:
    """Peak amplitude of harmonics ``1..harmonics`` for each window.

    Returns an array of shape ``(len(starts), harmonics)``. Windows are
    ``[start, start + length]`` with sample ``k`` taken at ``t_offset + k*dt``.
    """
    v = np.asarray(v, dtype=float)
    starts = np.atleast_1d(np.asarray(starts, dtype=float))
    ka, kb, fa, fb = _window_geometry(v.shape[0], dt, t_offset, starts, length)
    lo, hi = int((ka - (fa > 0)).min()), int((kb + (fb > 0)).max())
    seg = v[lo:hi + 1]
    t = t_offset + (lo + np.arange(seg.shape[0])) * dt
    ka, kb = ka - lo, kb - lo
    # values at the window edges by linear interpolation
    va = seg[ka] - fa * (seg[ka] - seg[np.maximum(ka - 1, 0)])
    vb = seg[kb] + fb * (seg[np.minimum(kb + 1, seg.shape[0] - 1)] - seg[kb])
    a = starts
    b = starts + length
    w = 2.0 * math.pi * f0
    out = np.empty((starts.shape[0], harmonics))
    for h in range(1, harmonics + 1):
        g = seg * np.exp(-1j * h * w * t)
        csum = np.concatenate(([0.0], np.cumsum(g)))
        interior = csum[kb + 1] - csum[ka] - 0.5 * (g[ka] + g[kb])
        ga = va * np.exp(-1j * h * w * a)
        gb = vb * np.exp(-1j * h * w * b)
        integral = dt * (interior + 0.5 * fa * (ga + g[ka]) + 0.5 * fb * (g[kb] + gb))
        out[:, h - 1] = np.abs(2.0 / length * integral)
    return out


def _check(dt, f0, harmonics, length):
    if harmonics < 2:
        raise ValueError("need at least two harmonics")
    if not 1.0 / dt > 2 * harmonics * f0:
        raise ValueError(f"sample rate {1 / dt:g} Hz too low for {harmonics} harmonics of {f0:g} Hz")
    periods = length * f0
    if round(periods) < 1 or abs(periods - round(periods)) > 1e-6:
        raise WindowError(f"window of {length!r} s is not a whole number of {f0:g} Hz periods")


def _report(amps, harmonics, window):
    v1 = amps[0]
    if not v1 > 1e-9 * max(1.0, float(np.max(amps))):
        raise DegenerateSignalError("fundamental magnitude is zero")
    thd = float(np.sqrt(np.sum(amps[1:] ** 2)) / v1)
    return THDReport(thd, float(v1 / math.sqrt(2.0)), harmonics, window, amps.copy())


def compute_thd(v: np.ndarray, dt: float, f0: float, harmonics: int = DEFAULT_HARMONICS,
                window: tuple[float, float] | None = None, t_offset: float = 0.0) -> THDReport:
    """THD of samples ``v`` over ``window`` (defaults to all whole periods
    from ``t_offset``)."""
    v = np.asarray(v, dtype=float)
    if window is None:
        whole = math.floor(((v.shape[0] - 1) * dt) * f0 + 1e-6)
        if whole < 1:
            raise WindowError("fewer than one period of samples")
        window = (t_offset, t_offset + whole / f0)
    a, b = window
    _check(dt, f0, harmonics, b - a)
    amps = harmonic_amplitudes(v, dt, f0, harmonics, [a], b - a, t_offset)[0]
    return _report(amps, harmonics, (a, b))


def trace_thd(trace: WaveformTrace, window: tuple[float, float] | None = None,
              harmonics: int = DEFAULT_HARMONICS) -> THDReport:
    """THD of the aggregate grid voltage; defaults to the last full period."""
    f0 = trace.meta["f_ac"]
    if window is None:
        T = 1.0 / f0
        end = (trace.n_samples - 1) * trace.sample_period
        window = (end - T, end)
    return compute_thd(trace.v_ac, trace.sample_period, f0, harmonics, window)


def windowed_thd(trace: WaveformTrace, f0: float | None = None, harmonics: int = DEFAULT_HARMONICS,
                 step_fraction: float = 1.0 / 20) -> list[THDReport]:
    """One-period sliding windows stepped by ``step_fraction`` of a period."""
    f0 = trace.meta["f_ac"] if f0 is None else f0
    T = 1.0 / f0
    dt = trace.sample_period
    last = (trace.n_samples - 1) * dt
    if last < T:
        raise WindowError("trace is shorter than one period")
    _check(dt, f0, harmonics, T)
    step = step_fraction * T
    n_win = int(math.floor((last - T) / step + 1e-9)) + 1
    starts = np.arange(n_win) * step
    amps = harmonic_amplitudes(trace.v_ac, dt, f0, harmonics, starts, T)
    return [_report(amps[i], harmonics, (float(starts[i]), float(starts[i] + T))) for i in range(n_win)]


def staircase_spectrum(n_op: int, harmonics: int = DEFAULT_HARMONICS) -> np.ndarray:
    """Peak amplitudes of harmonics ``1..harmonics`` of the unit-step staircase.

    Level ``k`` switches at angle ``asin(k / (n_op + 1))``; quarter-wave
    symmetry leaves only odd sine terms, ``4 / (pi h) * sum_k cos(h theta_k)``.
    """
    if n_op < 1:
        raise ValueError("need at least one operating agent")
    theta = np.arcsin(np.arange(1, n_op + 1) / (n_op + 1))
    h = np.arange(1, harmonics + 1)
    b = 4.0 / (np.pi * h) * np.cos(np.outer(h, theta)).sum(axis=1)
    b[h % 2 == 0] = 0.0
    return np.abs(b)


def staircase_thd_oracle(n_op: int, harmonics: int = DEFAULT_HARMONICS) -> float:
    b = staircase_spectrum(n_op, harmonics)
    return float(np.sqrt(np.sum(b[1:] ** 2)) / b[0])


def count_levels(v: np.ndarray, step: float, min_run: int = 3) -> int:
    """Distinct voltage levels among plateaus of at least ``min_run`` samples.

    Each sample is quantised to the nearest multiple of ``step``.
    """
    q = np.rint(np.asarray(v) / step).astype(np.int64)
    if q.size == 0:
        return 0
    edges = np.flatnonzero(np.diff(q)) + 1
    bounds = np.concatenate(([0], edges, [q.size]))
    runs = np.diff(bounds)
    return int(np.unique(q[bounds[:-1]][runs >= min_run]).size)


def recovery_time(reports: Sequence[THDReport], t_fail: float, target: float, tol: float = 0.005) -> float:
    """Delay from ``t_fail`` to the start of the first window that begins at
    or after the failure and from which every later window stays within
    ``tol`` (absolute THD ratio) of ``target``. ``inf`` if never."""
    ok = [abs(r.thd - target) <= tol for r in reports]
    best = math.inf
    for i in range(len(reports) - 1, -1, -1):
        if not ok[i]:
            break
        if reports[i].window[0] >= t_fail - 1e-12:
            best = reports[i].window[0] - t_fail
    return best


@dataclass
class RunRecord:
    run: int
    seed: int
    fail_agent: int | None
    fail_time: float | None
    thd: float
    recovery_time: float | None
    reconfig_latency: float | None
    levels_pre: int | None
    levels_post: int | None
    window_starts: np.ndarray = field(repr=False, default=None)
    window_thd: np.ndarray = field(repr=False, default=None)


@dataclass
class MonteCarloSummary:
    runs: int
    mean_thd: float
    ci95: tuple[float, float] | None
    records: list[RunRecord]
    reference_thd: float | None = None

    def mean_window_thd(self) -> tuple[np.ndarray, np.ndarray]:
        """Window start times and the across-run mean THD of each window."""
        starts = self.records[0].window_starts
        return starts, np.mean([r.window_thd for r in self.records], axis=0)


def mean_ci95(values: Sequence[float]) -> tuple[float, tuple[float, float] | None]:
    x = np.asarray(values, dtype=float)
    m = float(x.mean())
    if x.size < 2:
        return m, None
    half = Z95 * float(x.std(ddof=1)) / math.sqrt(x.size)
    return m, (m - half, m + half)


def plan_run(template: ArrayScenario, seed: int, dynamic_failures: int, fault_window):
    """Draw the failing agents and fault times for one run."""
    rng = np.random.default_rng(seed)
    static = template.static_failures
    candidates = [i for i in range(1, template.n_agents + 1) if i not in static]
    picks = rng.choice(candidates, size=dynamic_failures, replace=False) if dynamic_failures else []
    times = np.sort(rng.uniform(*fault_window, size=dynamic_failures)) if dynamic_failures else []
    faults = [f for f in template.faults if f.kind is FaultKind.STATIC]
    faults += [FaultEvent(int(a), float(t), FaultKind.DYNAMIC) for a, t in zip(picks, times)]
    return template.with_(faults=tuple(faults), seed=seed)


def _one_run(args):
    idx, scenario, harmonics, step_fraction, target = args
    trace = simulate(build_array(scenario))
    f0 = scenario.grid.f_ac
    T = 1.0 / f0
    reports = windowed_thd(trace, f0, harmonics, step_fraction)
    post = trace_thd(trace, harmonics=harmonics).thd
    dyn = scenario.dynamic_faults
    rec = RunRecord(idx, scenario.seed, None, None, post, None, None, None, None,
                    np.array([r.window[0] for r in reports]), np.array([r.thd for r in reports]))
    if dyn:
        f = dyn[-1]
        rec.fail_agent, rec.fail_time = f.agent, f.time
        rec.reconfig_latency = reconfiguration_latency(trace)
        if target is not None:
            rec.recovery_time = recovery_time(reports, f.time, target)
        n_op_pre = scenario.n_agents - len(scenario.static_failures)
        n_op_post = n_op_pre - len(dyn)
        v_peak = scenario.grid.v_peak
        if dyn[0].time >= T:
            rec.levels_pre = count_levels(trace.v_ac[trace.span(dyn[0].time - T, dyn[0].time)], v_peak / n_op_pre)
        settled = f.time + rec.reconfig_latency
        if n_op_post > 0 and trace.duration - settled >= T:
            rec.levels_post = count_levels(trace.v_ac[trace.span(trace.duration - T, trace.duration)],
                                           v_peak / n_op_post)
    return rec


def steady_thd(template: ArrayScenario, n_op: int, harmonics: int = DEFAULT_HARMONICS) -> float:
    """Final-period THD of a failure-free array of ``n_op`` agents."""
    sc = template.with_(n_agents=n_op, faults=())
    return trace_thd(simulate(build_array(sc)), harmonics=harmonics).thd


def monte_carlo(template: ArrayScenario, runs: int, *, dynamic_failures: int = 1,
                fault_window: tuple[float, float] | None = None, seeds: Sequence[int] | None = None,
                harmonics: int = DEFAULT_HARMONICS, step_fraction: float = 1.0 / 20,
                workers: int | None = None) -> MonteCarloSummary:
    """Independent runs of ``template`` with randomly placed dynamic failures.

    Each run fails ``dynamic_failures`` distinct operating agents at times
    uniform in ``fault_window`` (default: the second grid period). Reported
    THD is that of the final period; the recovery target is the steady THD
    of an array with the surviving agent count.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    T = template.grid.T_ac
    fault_window = fault_window or (T, 2 * T)
    if seeds is None:
        seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(template.seed).spawn(runs)]
    elif len(seeds) != runs:
        raise ValueError("need one seed per run")
    n_post = template.n_agents - len(template.static_failures) - dynamic_failures
    target = steady_thd(template, n_post, harmonics) if dynamic_failures and n_post > 0 else None
    jobs = [(i, plan_run(template, s, dynamic_failures, fault_window), harmonics, step_fraction, target)
            for i, s in enumerate(seeds)]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_one_run, jobs))
    else:
        records = [_one_run(j) for j in jobs]
    records.sort(key=lambda r: r.run)
    mean, ci = mean_ci95([r.thd for r in records])
    return MonteCarloSummary(runs, mean, ci, records, target)
