"""Composition of N inverter modules into one grid-tie, and its simulation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .converter import ConverterParams, IdealSource, SwitchedConverter
from .coordination import AgentStatus, CyberNode, make_view, reconfigure
from .hbridge import HBridge, Location, hbridge_output
from .scenario import ArrayScenario, Fidelity
from .simcore import Executive, SampleBuffer, SimClock

FAULT_RANK = 0


@dataclass
class Agent:
    index: int
    params: ConverterParams
    status: AgentStatus
    converter: SwitchedConverter | IdealSource | None = None
    hbridge: HBridge | None = None
    cyber: CyberNode | None = None


@dataclass
class ArraySystem:
    scenario: ArrayScenario
    agents: list[Agent]
    executive: Executive | None = None
    events: list[dict] = field(default_factory=list)

    def agent(self, index: int) -> Agent:
        return self.agents[index - 1]


@dataclass
class WaveformTrace:
    """Uniformly sampled voltages; sample ``k`` is at time ``k * sample_period``."""

    sample_period: float
    v_ac: np.ndarray
    per_agent_v_ac: np.ndarray
    per_agent_v_dc: np.ndarray
    events: list[dict]
    meta: dict

    @property
    def n_samples(self) -> int:
        return self.v_ac.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.sample_period

    @property
    def duration(self) -> float:
        return self.n_samples * self.sample_period

    def span(self, t0: float, t1: float) -> slice:
        """Slice of samples with ``t0 <= t < t1``."""
        k0 = max(0, math.ceil(t0 / self.sample_period - 1e-6))
        k1 = min(self.n_samples, max(k0, math.ceil(t1 / self.sample_period - 1e-6)))
        return slice(k0, k1)

    def events_of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def csv_header(self) -> list[str]:
        n = self.per_agent_v_ac.shape[0]
        return (["time", "v_ac"] + [f"v_ac_{i}" for i in range(1, n + 1)]
                + [f"v_dc_{i}" for i in range(1, n + 1)])

    def to_csv(self, path: str | Path) -> None:
        cols = np.column_stack([self.times, self.v_ac, self.per_agent_v_ac.T, self.per_agent_v_dc.T])
        np.savetxt(path, cols, fmt="%.10g", delimiter=",", header=",".join(self.csv_header()), comments="")

    def to_json(self, path: str | Path) -> None:
        doc = {"meta": self.meta, "events": self.events}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def build_array(scenario: ArrayScenario) -> ArraySystem:
    """Instantiate the agents with per-agent parameters drawn from the tolerances.

    Each agent's L, C, R and panel voltage are drawn uniformly within the
    scenario's tolerance band around nominal, from the scenario seed.
    """
    rng = np.random.default_rng(scenario.seed)
    u = rng.uniform(-1.0, 1.0, size=(scenario.n_agents, 4))
    nom, tol = scenario.converter, scenario.tolerance
    agents = []
    for i in range(scenario.n_agents):
        p = ConverterParams(
            L=nom.L * (1 + tol.L * u[i, 0]),
            C=nom.C * (1 + tol.C * u[i, 1]),
            R=nom.R * (1 + tol.R * u[i, 2]),
            T_dc=nom.T_dc,
            V_sp=nom.V_sp * (1 + tol.V_sp * u[i, 3]),
        )
        agents.append(Agent(i + 1, p, AgentStatus(i + 1)))
    return ArraySystem(scenario, agents)


def simulate(system: ArraySystem, horizon: float | None = None, *, record_edges: bool = False) -> WaveformTrace:
    """Run the composed system from grid phase zero up to ``horizon``.

    Physics, fault injection and the cyber layer share one event timeline.
    Statically failed agents are known to every agent from the start.
    """
    sc = system.scenario
    horizon = sc.horizon if horizon is None else horizon
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    clock = SimClock(sc.sample_period)
    ex = Executive(clock)
    buf = SampleBuffer(sc.n_agents, clock.n_samples(horizon), sc.sample_period)
    system.executive = ex
    events: list[dict] = []
    system.events = events
    v_peak, T_ac = sc.grid.v_peak, sc.grid.T_ac
    static = sc.static_failures
    nodes: dict[int, CyberNode] = {}

    def on_change(node: CyberNode, t: float) -> None:
        agent = system.agent(node.index)
        v_ref, sched = reconfigure(node.view, v_peak, T_ac)
        agent.converter.set_reference(v_ref, t)
        agent.hbridge.adopt(sched, t)
        events.append({"t": t, "kind": "reconfigure", "agent": node.index, "op_id": node.view.op_id,
                       "n_op": node.view.n_op, "v_ref": v_ref})

    for a in system.agents:
        a.status = AgentStatus(a.index)
        if sc.fidelity is Fidelity.FULL:
            a.converter = SwitchedConverter(a.index, a.params, ex, buf, cold_start=sc.cold_start,
                                            record_edges=record_edges)
        else:
            a.converter = IdealSource(a.index, ex, buf)
        a.hbridge = HBridge(a.index, ex, buf)
        a.cyber = CyberNode(a.index, sc.n_agents, sc.cyber, ex, nodes, events, on_change)
        nodes[a.index] = a.cyber
        if a.index in static:
            a.status.fail(0.0)
            a.converter.failed = a.hbridge.failed = a.cyber.failed = True

    if len(static) == sc.n_agents:
        events.append({"t": 0.0, "kind": "disconnect"})
    for a in system.agents:
        if a.status.failed:
            continue
        view = make_view(a.index, static, sc.n_agents, 0.0)
        v_ref, sched = reconfigure(view, v_peak, T_ac)
        a.converter.start(0.0, v_ref)
        a.hbridge.start(0.0, sched)
        a.cyber.start(0.0, static)

    def fault_action(agent: Agent):
        def act(t: float) -> None:
            if agent.status.failed:
                return
            agent.status.fail(t)
            agent.converter.fail(t)
            agent.hbridge.fail(t)
            agent.cyber.fail(t)
            events.append({"t": t, "kind": "fault", "agent": agent.index})
            if all(x.status.failed for x in system.agents):
                events.append({"t": t, "kind": "disconnect"})
        return act

    for f in sc.dynamic_faults:
        ex.schedule(f.time, f.agent, fault_action(system.agent(f.agent)), FAULT_RANK)

    ex.advance_to(horizon)
    for a in system.agents:
        a.converter.finalize(horizon)
        a.hbridge.finalize(horizon)

    per_v_ac = buf.polarity * buf.vdc
    v_ac = per_v_ac.sum(axis=0)
    meta = {
        "tool_version": __version__,
        "scenario_digest": sc.digest(),
        "scenario": sc.to_dict(),
        "n_agents": sc.n_agents,
        "fidelity": sc.fidelity.value,
        "seed": sc.seed,
        "v_peak": v_peak,
        "f_ac": sc.grid.f_ac,
        "sample_period": sc.sample_period,
        "horizon": horizon,
        "n_samples": buf.n_samples,
        "static_failures": sorted(static),
        "agents": [
            {"index": a.index, "L": a.params.L, "C": a.params.C, "R": a.params.R,
             "T_dc": a.params.T_dc, "V_sp": a.params.V_sp}
            for a in system.agents
        ],
        "events_processed": ex.events_processed,
    }
    return WaveformTrace(sc.sample_period, v_ac, per_v_ac, buf.vdc, list(events), meta)


def run(scenario: ArrayScenario, horizon: float | None = None) -> WaveformTrace:
    return simulate(build_array(scenario), horizon)


def grid_voltage(states: Iterable) -> float:
    """Series sum of H-bridge outputs over operating agents.

    Each item is ``(location, V_dc)`` or ``(location, V_dc, operating)``;
    failed agents contribute nothing.
    """
    total = 0.0
    for s in states:
        loc, v_dc, *rest = s
        if rest and not rest[0]:
            continue
        total += hbridge_output(Location(loc) if not isinstance(loc, Location) else loc, v_dc)
    return total


def reconfiguration_latency(trace: WaveformTrace) -> float:
    """Seconds from the last dynamic fault until every survivor has adopted
    the configuration that accounts for all failures."""
    faults = trace.events_of("fault")
    if not faults:
        return 0.0
    t_f = max(e["t"] for e in faults)
    n = trace.meta["n_agents"]
    failed = set(trace.meta["static_failures"]) | {e["agent"] for e in faults}
    n_op = n - len(failed)
    if n_op == 0:
        return 0.0
    done = {}
    for e in trace.events_of("reconfigure"):
        if e["t"] >= t_f and e["n_op"] == n_op:
            done.setdefault(e["agent"], e["t"])
    survivors = [i for i in range(1, n + 1) if i not in failed]
    return max(done.get(i, math.inf) for i in survivors) - t_f
