import random

import pytest

from tgextract.algo_basic import ALIVE, BasicProtocol, ExactModeProtocol, LinkAcc
from tgextract.graphs import GraphFamily, generate_family, make_graph
from tgextract.harness import check_properties, random_scenario
from tgextract.simnet import ConfigError, DelayDirective, Rbcast, Scenario, Send, SetTimer, build_simulation, run


def scenario_for(name, n=3, truth=None):
    fam = generate_family(name, n)
    truth = truth or make_graph(range(n), [(a, b) for a in range(n) for b in range(n) if a != b])
    return Scenario(n=n, family=fam, truth=truth, horizon=100)


def lexmin(acc, members):
    return min(range(len(members)), key=lambda i: (acc[i], members[i].nodes, members[i].edges))


def test_init_outputs_least_member_and_arms_timers():
    s = scenario_for("RING")
    p = BasicProtocol(0, s)
    acts = p.init()
    least = min(s.family.members, key=lambda g: (g.nodes, g.edges))
    assert p.output == least
    assert list(p.acc) == [0] * len(s.family)
    assert acts == [SetTimer(1, 1), SetTimer(2, 1)]


def test_single_member_family():
    g = make_graph([0, 1], [(0, 1)])
    s = Scenario(n=2, family=GraphFamily.custom(2, [g]), truth=g, horizon=10)
    p = BasicProtocol(1, s)
    p.init()
    assert p.output == g


def test_empty_family_rejected():
    s = Scenario(n=2, family=GraphFamily.custom(2, []), truth=make_graph([0, 1]), horizon=10)
    with pytest.raises(ConfigError):
        BasicProtocol(0, s)


def test_periodic_sends_alive_everywhere_and_one_broadcast():
    p = BasicProtocol(0, scenario_for("RING"))
    p.init()
    assert p.on_periodic() == [Send(1, ALIVE), Send(2, ALIVE), Rbcast(LinkAcc(None, 0))]


def test_encodings():
    assert ALIVE.encode() == "ALIVE"
    assert LinkAcc(None, 0).encode() == "ACC{q:⊥,h:0}"
    assert LinkAcc(1, 2).encode() == "ACC{q:1,h:2}"


def test_absence_accusation_hits_members_without_the_node():
    s = scenario_for("TREE")
    p = BasicProtocol(1, s)
    p.init()
    p.on_rb_deliver(0, LinkAcc(None, 0))
    for i, g in enumerate(s.family.members):
        assert p.acc[i] == (0 not in g.nodeset)


def test_absence_accusation_noop_when_all_members_contain_node():
    g = make_graph([0, 1], [(0, 1)])
    h = make_graph([0, 1], [(1, 0)])
    s = Scenario(n=2, family=GraphFamily.custom(2, [g, h]), truth=g, horizon=10)
    p = BasicProtocol(0, s)
    p.init()
    p.on_rb_deliver(1, LinkAcc(None, 1))
    assert list(p.acc) == [0, 0]


def test_link_accusation_hits_members_with_the_edge():
    s = scenario_for("SC")
    p = BasicProtocol(2, s)
    p.init()
    p.on_rb_deliver(2, LinkAcc(1, 2))
    for i, g in enumerate(s.family.members):
        assert p.acc[i] == ((1, 2) in g.edgeset)


def test_output_is_lexmin_after_random_accusations():
    s = scenario_for("TREE")
    p = BasicProtocol(0, s)
    p.init()
    rng = random.Random(7)
    members = s.family.members
    for _ in range(200):
        q = rng.choice([None, 0, 1, 2])
        h = rng.choice([x for x in range(3) if x != q])
        p.on_rb_deliver(h, LinkAcc(q, h))
        assert p.output == members[lexmin(list(p.acc), members)]


def test_tie_broken_by_graph_order():
    g = make_graph([0, 1], [(0, 1)])
    h = make_graph([0, 1], [(1, 0)])
    s = Scenario(n=2, family=GraphFamily.custom(2, [h, g]), truth=g, horizon=10)
    p = BasicProtocol(0, s)
    p.init()
    assert p.output == g
    p.on_rb_deliver(1, LinkAcc(0, 1))
    assert p.output == h
    p.on_rb_deliver(0, LinkAcc(1, 0))
    assert p.output == g


def test_alive_rearms_with_current_estimate():
    p = BasicProtocol(0, scenario_for("RING"))
    p.init()
    p.delta_est[2] = 4
    assert p.on_message(2, ALIVE) == [SetTimer(2, 4)]


def test_expiry_accuses_link_and_grows_estimate():
    p = BasicProtocol(0, scenario_for("RING"))
    p.init()
    assert p.on_expire(1) == [Rbcast(LinkAcc(1, 0)), SetTimer(1, 2)]
    for k in range(2, 6):
        p.on_expire(1)
        assert p.delta_est[1] == 1 + k


def test_alive_in_flight_from_crashed_sender_still_rearms():
    fam = generate_family("RING", 3)
    truth = make_graph([0, 1], [(0, 1), (1, 0)])
    s = Scenario(
        n=3, family=fam, truth=truth, crash_times={2: 12}, horizon=200,
        adversary=(DelayDirective((2, 0), (10, 10), 20),),
    )
    trace = run(build_simulation(s, BasicProtocol))
    late = [
        e for e in trace.events
        if e.kind == "DELIVER" and e.process == 0 and e.detail["from"] == 2 and e.detail["sent"] == 10
    ]
    assert len(late) == 1 and late[0].tick >= 30
    t = late[0].tick
    expiries = [e.tick for e in trace.events if e.kind == "TIMER_EXPIRE" and e.process == 0 and e.detail["peer"] == 2]
    estimate = 1 + sum(1 for x in expiries if x < t)
    assert min(x for x in expiries if x > t) == t + estimate


def test_timely_links_stop_expiring():
    n = 3
    truth = make_graph(range(n), [(a, b) for a in range(n) for b in range(n) if a != b])
    s = Scenario(n=n, family=generate_family("COMPLETE", n), truth=truth, horizon=1000)
    trace = run(build_simulation(s, BasicProtocol))
    expiries = [e.tick for e in trace.events if e.kind == "TIMER_EXPIRE"]
    assert expiries and max(expiries) < 10 * s.k_period * s.delta


@pytest.mark.parametrize("name", ["RING", "SC"])
def test_counters_of_final_graph_agree(name):
    s = random_scenario(name, 4, seed=2, horizon=3000)
    sim = build_simulation(s, BasicProtocol)
    trace = run(sim)
    report = check_properties(trace, s)
    assert report.converged
    idx = s.family.index[report.final_graph]
    values = {int(sim.procs[p].acc[idx]) for p in s.correct}
    assert len(values) == 1


def test_exact_mode_outputs_match_trusted_set():
    s = random_scenario("TREE", 3, seed=4, horizon=400)
    sim = build_simulation(s, ExactModeProtocol)
    sim.initialize()
    while sim.now < 400:
        sim.advance()
        for p in s.correct:
            proc = sim.procs[p]
            assert proc.output.nodeset == frozenset(proc.trusted)
