import itertools
import math

import pytest

from gridtie.array import run
from gridtie.coordination import (
    CyberTiming, FailureDetector, LineNetwork, compute_identifier, convergence_time, gossip_step,
    heartbeat_detect, last_detection_time, make_view, neighbors, reconfigure,
)
from gridtie.converter import reference_voltage
from gridtie.errors import NoOperatingAgentsError
from gridtie.hbridge import switching_schedule
from gridtie.scenario import ArrayScenario, FaultEvent, FaultKind

from oracles import ranks_of_survivors

V_PEAK = math.sqrt(2) * 120
T = 1 / 60


def test_identifiers_without_failures():
    for n in range(1, 9):
        assert [compute_identifier(i, (), n) for i in range(1, n + 1)] == [(i, n) for i in range(1, n + 1)]


def test_identifiers_last_agent_failed():
    assert [compute_identifier(i, {6}, 6) for i in range(1, 6)] == [(i, 5) for i in range(1, 6)]


def test_identifiers_second_agent_failed():
    ids = [compute_identifier(i, {2}, 5)[0] for i in range(1, 6)]
    assert ids == [1, None, 2, 3, 4]
    assert compute_identifier(1, {2}, 5)[1] == 4


def test_identifiers_exhaustive_small_lines():
    for n in range(1, 9):
        for k in range(n + 1):
            for failed in itertools.combinations(range(1, n + 1), k):
                expect = ranks_of_survivors(n, set(failed))
                got = {i: compute_identifier(i, failed, n)[0] for i in range(1, n + 1) if i not in failed}
                assert got == expect
                assert sorted(got.values()) == list(range(1, n - k + 1))


def test_neighbors():
    assert neighbors(3, (), 5) == (2, 4)
    assert neighbors(3, {2}, 5) == (1, 4)
    assert neighbors(1, (), 5) == (None, 2)
    assert neighbors(5, {4, 3}, 5) == (2, None)


def test_view_counts_failures_each_side():
    v = make_view(4, {1, 2, 6}, 7)
    assert (v.left_failures, v.right_failures, v.op_id, v.n_op) == (2, 1, 2, 4)
    assert v.n_op == 7 - v.n_failed


def test_reconfigure_raises_reference_after_failure():
    before, _ = reconfigure(make_view(1, (), 5), V_PEAK, T)
    after, sched = reconfigure(make_view(1, {3}, 5), V_PEAK, T)
    assert before == pytest.approx(V_PEAK / 5) and after == pytest.approx(V_PEAK / 4)
    assert sched == switching_schedule(1, 4, T)


def test_reconfigure_idempotent():
    v = make_view(2, (), 5)
    assert reconfigure(v, V_PEAK, T) == reconfigure(v, V_PEAK, T)


def test_reconfigure_without_operating_agents():
    with pytest.raises(NoOperatingAgentsError):
        reconfigure(make_view(1, {1}, 1), V_PEAK, T)


def test_detector():
    d = FailureDetector(5e-4)
    d.watch(2, 0.0)
    d.watch(4, 0.0)
    assert d.detect(2.5e-4) == set()
    d.heard(2, 5e-4)
    assert d.detect(5e-4) == {4}
    assert d.detect(6e-4) == set()
    assert d.detect(1e-3) == {2}


def test_stateless_detect():
    assert heartbeat_detect(1e-3, {}, 5e-4) == set()
    assert heartbeat_detect(1e-3, {2: 4e-4, 3: 9e-4}, 5e-4) == {2}
    assert heartbeat_detect(1e-3, {2: 4e-4}, 5e-4, already={2}) == set()


def _rounds(views, net, until):
    k, history = 0, []
    while k * net.round_period <= until + 1e-12:
        views = gossip_step(k * net.round_period, views, net)
        history.append((k * net.round_period, views))
        k += 1
    return history


def test_gossip_no_failures_leaves_views_unchanged():
    views = {a: make_view(a, (), 5) for a in range(1, 6)}
    net = LineNetwork(5, frozenset())
    for _, v in _rounds(views, net, 3e-3):
        assert v == views


@pytest.mark.parametrize("h,r", [(1e-4, 2.5e-4), (3e-4, 2.5e-4), (2.5e-4, 2.5e-4)])
def test_gossip_reaches_far_end(h, r):
    net = LineNetwork(5, frozenset({5}), h, r)
    views = {a: make_view(a, {5} if a == 4 else (), 5) for a in range(1, 5)}
    final = _rounds(views, net, 20 * r)[-1][1]
    assert 5 in final[1].known_failed
    assert final[1].last_update <= 4 * max(h, r) + 1e-12


def test_gossip_failures_at_both_ends():
    n = 7
    net = LineNetwork(n, frozenset({1, n}))
    views = {a: make_view(a, {1} if a == 2 else {n} if a == n - 1 else (), n) for a in range(2, n)}
    hist = _rounds(views, net, 30 * net.round_period)
    done = next(k for k, (_, v) in enumerate(hist) if all(v[a].known_failed == {1, n} for a in v))
    assert done <= math.ceil(n / 2)


def test_gossip_knowledge_is_monotone():
    net = LineNetwork(6, frozenset({3, 6}))
    views = {a: make_view(a, {3} if a in (2, 4) else {6} if a == 5 else (), 6) for a in (1, 2, 4, 5)}
    prev = views
    for _, v in _rounds(views, net, 5e-3):
        for a in v:
            assert prev[a].known_failed <= v[a].known_failed
        prev = v


def _dyn(n, faults, horizon=12e-3):
    sc = ArrayScenario(n, horizon=horizon,
                       faults=tuple(FaultEvent(a, t, FaultKind.DYNAMIC) for a, t in faults))
    return run(sc)


def test_heartbeat_detection_deadline():
    tr = _dyn(5, [(3, 5e-3)])
    det = [e for e in tr.events_of("detect") if e["peer"] == 3]
    assert {e["agent"] for e in det} == {2, 4}
    assert all(5e-3 < e["t"] <= 5.75e-3 + 1e-12 for e in det)


def test_no_false_detection_without_failures():
    tr = _dyn(8, [], horizon=30e-3)
    assert tr.events_of("detect") == [] and tr.events_of("learn") == []


def test_detection_reported_once():
    tr = _dyn(4, [(2, 1e-3)])
    keys = [(e["agent"], e["peer"]) for e in tr.events_of("detect")]
    assert len(keys) == len(set(keys))


@pytest.mark.parametrize("n,faults", [(5, [(3, 5e-3)]), (8, [(1, 2e-3)]), (8, [(8, 2e-3)]),
                                      (7, [(3, 2e-3), (4, 2e-3)]), (6, [(2, 1e-3), (5, 4e-3)])])
def test_cyber_gossip_convergence_bound(n, faults):
    tr = _dyn(n, faults)
    failed = {a for a, _ in faults}
    operating = [a for a in range(1, n + 1) if a not in failed]
    timing = CyberTiming()
    t_conv = convergence_time(tr.events, operating, failed)
    assert t_conv - last_detection_time(tr.events) <= (n - 1) * timing.hop_bound() + 1e-12


def test_cyber_knowledge_is_monotone_and_reconfigures():
    tr = _dyn(6, [(2, 1e-3), (5, 4e-3)])
    by_agent = {}
    for e in tr.events_of("learn"):
        prev = by_agent.get(e["agent"], set())
        assert prev <= set(e["known"])
        by_agent[e["agent"]] = set(e["known"])
    final = {e["agent"]: e for e in tr.events_of("reconfigure") if e["agent"] not in (2, 5)}
    assert {a: (e["op_id"], e["n_op"]) for a, e in final.items()} == {1: (1, 4), 3: (2, 4), 4: (3, 4), 6: (4, 4)}
    assert all(e["v_ref"] == pytest.approx(reference_voltage(V_PEAK, 4)) for e in final.values())


def test_static_failures_known_from_start():
    sc = ArrayScenario(5, horizon=5e-3, faults=(FaultEvent(2),))
    tr = run(sc)
    assert tr.events_of("detect") == []
    assert tr.events_of("learn") == []
