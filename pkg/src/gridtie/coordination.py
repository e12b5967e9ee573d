"""Cyber layer: failure detection, gossip of failed identifiers on the line
topology, operational identifiers, and reconfiguration of each module.

Agents are numbered ``1..N`` along the string. Knowledge of failures only ever
grows; crash failures are permanent.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .converter import reference_voltage
from .errors import NoOperatingAgentsError
from .hbridge import SwitchingSchedule, switching_schedule
from .simcore import TIME_EPS, Executive


@dataclass
class AgentStatus:
    index: int
    failed: bool = False
    fail_time: float | None = None

    def fail(self, t: float) -> None:
        if not self.failed:
            self.failed = True
            self.fail_time = t


@dataclass(frozen=True)
class CoordinationView:
    owner: int
    left_failures: int
    right_failures: int
    op_id: int | None
    n_op: int
    left_nbr: int | None
    right_nbr: int | None
    last_update: float = 0.0
    known_failed: frozenset[int] = frozenset()

    @property
    def n_failed(self) -> int:
        return self.left_failures + self.right_failures


@dataclass(frozen=True)
class GossipMessage:
    origin: int
    failed_set: frozenset[int]
    hop_time: float


@dataclass(frozen=True)
class CyberTiming:
    """Periods and delays of the cyber layer, in seconds."""

    heartbeat_period: float = 2.5e-4
    detection_timeout: float = 5e-4
    gossip_period: float = 2.5e-4
    hop_delay: float = 1e-4

    def hop_bound(self) -> float:
        return max(self.hop_delay, self.gossip_period)


def compute_identifier(owner: int, failed_set: Iterable[int], n_agents: int) -> tuple[int | None, int]:
    """Rank of ``owner`` among operating agents, and the operating count.

    ``op_id = owner - (failures with lower index)``; failed owners get ``None``.
    """
    failed = set(failed_set)
    n_op = n_agents - len(failed)
    if owner in failed:
        return None, n_op
    return owner - sum(1 for j in failed if j < owner), n_op


def neighbors(owner: int, failed_set: Iterable[int], n_agents: int) -> tuple[int | None, int | None]:
    """Nearest operating agents to the left and right of ``owner``."""
    failed = set(failed_set)
    left = next((j for j in range(owner - 1, 0, -1) if j not in failed), None)
    right = next((j for j in range(owner + 1, n_agents + 1) if j not in failed), None)
    return left, right


def make_view(owner: int, failed_set: Iterable[int], n_agents: int, t: float = 0.0) -> CoordinationView:
    failed = frozenset(failed_set)
    op_id, n_op = compute_identifier(owner, failed, n_agents)
    left, right = neighbors(owner, failed, n_agents)
    lf = sum(1 for j in failed if j < owner)
    rf = sum(1 for j in failed if j > owner)
    return CoordinationView(owner, lf, rf, op_id, n_op, left, right, t, failed)


def reconfigure(view: CoordinationView, V_peak: float, T_ac: float) -> tuple[float, SwitchingSchedule]:
    """New DC reference and H-bridge schedule for an operating agent."""
    if view.n_op < 1:
        raise NoOperatingAgentsError("no operating agents; grid-tie disconnect")
    if view.op_id is None:
        raise ValueError(f"agent {view.owner} is failed and cannot be reconfigured")
    return reference_voltage(V_peak, view.n_op), switching_schedule(view.op_id, view.n_op, T_ac)


class FailureDetector:
    """Timeout-based crash detector over a set of monitored peers."""

    def __init__(self, timeout: float):
        self.timeout = timeout
        self.last_heard: dict[int, float] = {}
        self.detected: set[int] = set()

    def watch(self, peer: int, t: float) -> None:
        # a newly monitored peer gets a full timeout of grace
        if peer not in self.last_heard:
            self.last_heard[peer] = t

    def unwatch(self, peer: int) -> None:
        self.last_heard.pop(peer, None)

    def heard(self, peer: int, t: float) -> None:
        if peer in self.last_heard:
            self.last_heard[peer] = max(self.last_heard[peer], t)

    def detect(self, now: float) -> set[int]:
        """Peers silent for at least the timeout that were not reported before."""
        new = {
            p for p, last in self.last_heard.items()
            if p not in self.detected and now - last >= self.timeout - TIME_EPS
        }
        self.detected |= new
        return new


def heartbeat_detect(now: float, last_heard: Mapping[int, float], timeout: float,
                     already: Iterable[int] = ()) -> set[int]:
    """Stateless form of :meth:`FailureDetector.detect`."""
    already = set(already)
    return {p for p, last in last_heard.items() if p not in already and now - last >= timeout - TIME_EPS}


@dataclass
class LineNetwork:
    """Synchronous-round model of gossip on the line, with per-hop delay.

    ``failed`` is the ground truth: failed agents neither send nor receive.
    """

    n_agents: int
    failed: frozenset[int]
    hop_delay: float = 1e-4
    round_period: float = 2.5e-4
    in_flight: list[tuple[float, int, GossipMessage]] = field(default_factory=list)


def gossip_step(now: float, views: Mapping[int, CoordinationView], network: LineNetwork) -> dict[int, CoordinationView]:
    """Advance gossip to the round at time ``now``.

    Messages that arrived since the previous round are merged in arrival
    order; an agent whose knowledge grows forwards it to its neighbours at
    once, and such forwards are delivered within this call if they land by
    ``now``. Then every operating agent with something to report sends its
    set to its current left and right neighbours, one hop delay away.
    """
    out = dict(views)
    pending = sorted(network.in_flight, key=lambda m: (m[0], m[1], m[2].origin))
    network.in_flight = []
    seq = itertools.count()
    heap = [(t, dst, msg.origin, next(seq), msg) for t, dst, msg in pending]
    heapq.heapify(heap)

    def send(src, view, t):
        msg = GossipMessage(src, view.known_failed, t)
        for nbr in (view.left_nbr, view.right_nbr):
            if nbr is not None:
                heapq.heappush(heap, (t + network.hop_delay, nbr, src, next(seq), msg))

    while heap and heap[0][0] <= now + TIME_EPS:
        t, dst, _, _, msg = heapq.heappop(heap)
        if dst not in out or dst in network.failed:
            continue
        v = out[dst]
        grown = v.known_failed | (msg.failed_set - {dst})
        if grown != v.known_failed:
            out[dst] = make_view(dst, grown, network.n_agents, t)
            send(dst, out[dst], t)
    for a, v in out.items():
        if a not in network.failed and v.known_failed:
            send(a, v, now)
    network.in_flight = [(e[0], e[1], e[4]) for e in sorted(heap, key=lambda e: e[:4])]
    return out


HEARTBEAT = "heartbeat"


class CyberNode:
    """One agent's controller process: heartbeats, detection and gossip.

    Knowledge changes are pushed to the neighbours immediately and also
    re-sent on every gossip round, so each hop costs one hop delay.
    """

    RANK = 1

    def __init__(self, index: int, n_agents: int, timing: CyberTiming, executive: Executive,
                 nodes: Mapping[int, "CyberNode"], events: list, on_change: Callable[["CyberNode", float], None]):
        self.index = index
        self.n_agents = n_agents
        self.timing = timing
        self.ex = executive
        self.nodes = nodes
        self.events = events
        self.on_change = on_change
        self.failed = False
        self.detector = FailureDetector(timing.detection_timeout)
        self.view: CoordinationView | None = None
        self._hb_k = 0
        self._gossip_k = 0

    def start(self, t: float, known_failed: Iterable[int]) -> None:
        self.view = make_view(self.index, known_failed, self.n_agents, t)
        self._t0 = t
        self._rewatch(t)
        self.ex.schedule(t, self.index, self._tick, self.RANK)
        self.ex.schedule(t, self.index, self._gossip, self.RANK)

    @property
    def known(self) -> frozenset[int]:
        return self.view.known_failed

    def _nbrs(self):
        return [n for n in (self.view.left_nbr, self.view.right_nbr) if n is not None]

    def _rewatch(self, t):
        nbrs = set(self._nbrs())
        for p in list(self.detector.last_heard):
            if p not in nbrs:
                self.detector.unwatch(p)
        for p in nbrs:
            self.detector.watch(p, t)

    def _send(self, dst: int, payload, t: float) -> None:
        node = self.nodes[dst]
        self.ex.schedule(t + self.timing.hop_delay, dst, lambda tt: node.receive(self.index, payload, tt), self.RANK)

    def _tick(self, t: float) -> None:
        if self.failed:
            return
        for nbr in self._nbrs():
            self._send(nbr, HEARTBEAT, t)
        new = self.detector.detect(t)
        if new:
            for p in sorted(new):
                self.events.append({"t": t, "kind": "detect", "agent": self.index, "peer": p})
            self.learn(new, t)
        self._hb_k += 1
        self.ex.schedule(self._t0 + self._hb_k * self.timing.heartbeat_period, self.index, self._tick, self.RANK)

    def _gossip(self, t: float) -> None:
        if self.failed:
            return
        if self.known:
            self._push(t)
        self._gossip_k += 1
        self.ex.schedule(self._t0 + self._gossip_k * self.timing.gossip_period, self.index, self._gossip, self.RANK)

    def _push(self, t):
        msg = GossipMessage(self.index, self.known, t)
        for nbr in self._nbrs():
            self._send(nbr, msg, t)

    def receive(self, src: int, payload, t: float) -> None:
        if self.failed:
            return
        self.detector.heard(src, t)
        if isinstance(payload, GossipMessage):
            self.learn(payload.failed_set, t)

    def learn(self, ids: Iterable[int], t: float) -> bool:
        new = set(ids) - self.known - {self.index}
        if not new:
            return False
        self.view = make_view(self.index, self.known | new, self.n_agents, t)
        self._rewatch(t)
        self.events.append({"t": t, "kind": "learn", "agent": self.index, "known": sorted(self.known)})
        self.on_change(self, t)
        self._push(t)
        return True

    def fail(self, t: float) -> None:
        self.failed = True


def convergence_time(events: list, operating: Iterable[int], failed: Iterable[int],
                     initially_known: Iterable[int] = ()) -> float:
    """Time at which the last operating agent learned the full failed set.

    Returns ``inf`` when some operating agent never did.
    """
    target = set(failed)
    if target <= set(initially_known):
        return 0.0
    done = {}
    for e in events:
        if e["kind"] == "learn" and set(e["known"]) >= target:
            done.setdefault(e["agent"], e["t"])
    times = [done.get(a, math.inf) for a in operating]
    return max(times, default=0.0)


def last_detection_time(events: list) -> float:
    ts = [e["t"] for e in events if e["kind"] == "detect"]
    return max(ts) if ts else math.nan
