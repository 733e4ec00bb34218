"""Property checks over traces, a definitional oracle, and scenario builders.

`check_properties` judges a finished run against the extraction properties.
`brute_force_extraction_oracle` lists the acceptable outputs straight from
the definitions, without simulating anything. The scenario builders produce
seeded random runs for the test suites and the two adversarial schedules
that force output alternation.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Optional

from .algo_basic import BasicProtocol, ExactModeProtocol
from .algo_efficient import EfficientProtocol, ListingEfficientProtocol
from .graphs import (
    CapacityError,
    Dicut,
    GraphFamily,
    TimelinessGraph,
    format_graph,
    generate_family,
    induced_subgraph,
    is_compatible,
    is_dicut,
    make_graph,
    root_of,
)
from .simnet import (
    COUNTER_REGRESSION,
    DELIVER,
    OUTPUT_CHANGE,
    SEND,
    DelayDirective,
    Scenario,
    Trace,
    build_simulation,
    run,
    scenario_digest,
)

PROTOCOLS = {
    "basic": BasicProtocol,
    "efficient": EfficientProtocol,
    "efficient-relay": ListingEfficientProtocol,
    "strawman": ExactModeProtocol,
}

EXACT_FAMILIES = frozenset({"SC", "COMPLETE", "RING", "BIC"})
ROOTED_FAMILIES = frozenset({"STAR", "TREE"})

PASS, FAIL, NA = "PASS", "FAIL", "N/A"

PROPERTY_NAMES = (
    "convergence", "compatibility", "closure", "validity", "exactness",
    "root_correct", "efficiency", "monotonicity", "fifo", "timeliness", "routing",
)


class InputError(ValueError):
    """Trace and scenario do not belong together, or bad script arguments."""


@dataclass(frozen=True)
class Verdict:
    status: str
    detail: str = ""


@dataclass
class PropertyReport:
    converged: bool
    stabilization_tick: Optional[int]
    final_graph: Optional[TimelinessGraph]
    verdicts: dict

    def status(self, name: str) -> str:
        return self.verdicts[name].status

    @property
    def all_pass(self) -> bool:
        return all(v.status != FAIL for v in self.verdicts.values())

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "stabilization_tick": self.stabilization_tick,
            "final_graph": format_graph(self.final_graph),
            "verdicts": {
                k: {"status": v.status, "detail": v.detail} for k, v in self.verdicts.items()
            },
        }


def run_scenario(scenario: Scenario, algo: str = "basic", horizon: Optional[int] = None) -> Trace:
    try:
        factory = PROTOCOLS[algo]
    except KeyError:
        raise InputError(f"unknown algorithm {algo!r}") from None
    return run(build_simulation(scenario, factory), horizon)


# -- property checking -----------------------------------------------------

def _final_outputs(trace: Trace, procs) -> tuple[dict, int]:
    final = {p: None for p in procs}
    last = 0
    for e in trace.events:
        if e.kind == OUTPUT_CHANGE and e.process in final:
            final[e.process] = e.output
            last = max(last, e.tick)
    return final, last


def _link_delays(trace: Trace) -> dict:
    worst: dict[tuple[int, int], int] = {}
    for e in trace.events:
        if e.kind == DELIVER:
            link = (e.detail["from"], e.process)
            d = e.tick - e.detail["sent"]
            if d > worst.get(link, -1):
                worst[link] = d
    return worst


def _simple_paths(g: TimelinessGraph, src: int, dst: int):
    succ = defaultdict(list)
    for a, b in g.edges:
        succ[a].append(b)
    stack = [(src, [src])]
    while stack:
        v, path = stack.pop()
        for w in succ[v]:
            if w == dst:
                yield path + [w]
            elif w not in path:
                stack.append((w, path + [w]))


def check_properties(
    trace: Trace,
    scenario: Scenario,
    family: Optional[GraphFamily] = None,
    require_exact: bool = False,
) -> PropertyReport:
    if trace.meta.get("scenario") != scenario_digest(scenario):
        raise InputError("trace was not produced from this scenario")
    if trace.meta.get("seed") != scenario.seed:
        raise InputError("trace seed differs from the scenario seed")
    family = family or scenario.family
    horizon = trace.meta.get("horizon", 0)
    correct = scenario.correct
    v: dict[str, Verdict] = {}

    final, t_star = _final_outputs(trace, correct)
    outs = set(final.values())
    common = next(iter(outs)) if len(outs) == 1 else None
    converged = horizon > 0 and common is not None and t_star <= horizon / 2
    if horizon == 0:
        v["convergence"] = Verdict(FAIL, "empty run")
    elif common is None:
        v["convergence"] = Verdict(FAIL, f"{len(outs)} distinct final outputs among correct processes")
    elif not converged:
        v["convergence"] = Verdict(FAIL, f"last output change at {t_star} is past half of horizon {horizon}")
    else:
        v["convergence"] = Verdict(PASS, f"stable from tick {t_star}")

    g = common
    if g is None:
        for name in ("compatibility", "closure", "validity"):
            v[name] = Verdict(FAIL, "no common final output")
    else:
        restricted = induced_subgraph(g, correct)
        v["compatibility"] = (
            Verdict(PASS)
            if is_compatible(restricted, scenario.truth)
            else Verdict(FAIL, f"{format_graph(restricted)} is not compatible with the truth graph")
        )
        xs, ys = g.nodeset & correct, g.nodeset - correct
        if not ys:
            v["closure"] = Verdict(PASS, "no faulty node retained")
        elif xs and is_dicut(g, Dicut(xs, ys)):
            v["closure"] = Verdict(PASS, f"faulty {sorted(ys)} behind a dicut")
        else:
            v["closure"] = Verdict(FAIL, f"faulty {sorted(ys)} not behind a dicut")
        v["validity"] = Verdict(PASS) if g in family else Verdict(FAIL, "output outside the family")

    if family.name in EXACT_FAMILIES or require_exact:
        if g is None:
            v["exactness"] = Verdict(FAIL, "no common final output")
        elif g.nodeset == correct:
            v["exactness"] = Verdict(PASS)
        else:
            v["exactness"] = Verdict(FAIL, f"nodes {list(g.nodes)} vs correct {sorted(correct)}")
    else:
        v["exactness"] = Verdict(NA)

    if family.name in ROOTED_FAMILIES:
        r = root_of(g) if g is not None else None
        if r is not None and r in correct:
            v["root_correct"] = Verdict(PASS, f"root {r}")
        else:
            v["root_correct"] = Verdict(FAIL, f"root {r} is not correct")
    else:
        v["root_correct"] = Verdict(NA)

    if str(trace.meta.get("algo", "")).startswith("efficient"):
        if g is None or not converged:
            v["efficiency"] = Verdict(FAIL, "no stable output")
        else:
            start = max(t_star, math.ceil(3 * horizon / 4))
            bad = [
                e for e in trace.events
                if e.kind == SEND and e.tick >= start and e.process in correct
                and (e.detail["to"] == "*" or (e.process, e.detail["to"]) not in g.edgeset)
            ]
            if bad:
                e = bad[0]
                v["efficiency"] = Verdict(
                    FAIL, f"{len(bad)} sends off the final graph from tick {start}, first {e.process}->{e.detail['to']} at {e.tick}"
                )
            else:
                v["efficiency"] = Verdict(PASS, f"all sends on final edges from tick {start}")
    else:
        v["efficiency"] = Verdict(NA)

    regress = [e for e in trace.events if e.kind == COUNTER_REGRESSION]
    v["monotonicity"] = (
        Verdict(PASS) if not regress
        else Verdict(FAIL, f"{len(regress)} regressions, first at tick {regress[0].tick}")
    )

    last_seq: dict = {}
    fifo_bad = 0
    late = 0
    for e in trace.events:
        if e.kind != DELIVER:
            continue
        link = (e.detail["from"], e.process)
        if e.detail["seq"] <= last_seq.get(link, -1):
            fifo_bad += 1
        last_seq[link] = e.detail["seq"]
        if link in scenario.truth.edgeset and e.tick - e.detail["sent"] > scenario.delta:
            late += 1
    v["fifo"] = Verdict(PASS) if not fifo_bad else Verdict(FAIL, f"{fifo_bad} out-of-order deliveries")
    v["timeliness"] = Verdict(PASS) if not late else Verdict(FAIL, f"{late} late deliveries on timely links")

    if g is None:
        v["routing"] = Verdict(FAIL, "no common final output")
    else:
        delays = _link_delays(trace)
        problem = None
        for a in sorted(g.nodeset & correct):
            for b in sorted(g.nodeset & correct):
                if a == b:
                    continue
                for path in _simple_paths(g, a, b):
                    for u, w in zip(path, path[1:]):
                        if w not in correct:
                            problem = f"path {path} crosses faulty {w}"
                        elif (u, w) not in delays:
                            problem = f"no delivery observed on ({u},{w})"
                        elif delays[(u, w)] > scenario.delta:
                            problem = f"link ({u},{w}) took {delays[(u, w)]} ticks"
                        if problem:
                            break
                    if problem:
                        break
                if problem:
                    break
            if problem:
                break
        v["routing"] = Verdict(FAIL, problem) if problem else Verdict(PASS)

    return PropertyReport(converged, t_star if converged else None, g, v)


def brute_force_extraction_oracle(scenario: Scenario, family: Optional[GraphFamily] = None) -> set:
    """Family members acceptable as a final output, straight from the definitions."""
    family = family or scenario.family
    correct = set(scenario.correct)
    truth_edges = set(scenario.truth.edges)
    ok = set()
    for g in family.members:
        nodes = set(g.nodes)
        kept = nodes & correct
        dropped = nodes - correct
        kept_edges = {(a, b) for (a, b) in g.edges if a in kept and b in kept}
        if kept != correct or not kept_edges <= truth_edges:
            continue
        if dropped and any(a in dropped and b in kept for (a, b) in g.edges):
            continue
        ok.add(g)
    return ok


# -- scenario builders -----------------------------------------------------

def escalating_stalls(
    link: tuple[int, int], start: int, horizon: int, k: int, base: int, step: int, quiet: int
) -> list[DelayDirective]:
    """Directives making a link miss every fixed bound.

    Each stall holds back the messages sent during one period for a delay
    that grows by `step` per stall; stalls are spaced so that the gaps
    observed by the receiver keep growing too.
    """
    out = []
    t, i = start, 0
    while t < horizon:
        delay = base + step * i
        out.append(DelayDirective(link, (t, t + k - 1), delay))
        t += delay + quiet
        i += 1
    return out


def random_scenario(
    family_name: str,
    n: int = 4,
    seed: int = 0,
    horizon: int = 4000,
    max_crashes: int = 2,
    delta: int = 3,
    k_period: int = 5,
    extra_edge_prob: float = 0.3,
) -> Scenario:
    """A seeded run whose truth graph admits a compatible member of the family."""
    rng = random.Random(f"{family_name}/{n}/{seed}")
    family = generate_family(family_name, n)
    while True:
        crashed = rng.sample(range(n), rng.randint(0, max_crashes))
        correct = frozenset(range(n)) - frozenset(crashed)
        on_correct = [g for g in family.members if g.nodeset == correct]
        if on_correct:
            break
    base = rng.choice(on_correct)
    edges = set(base.edges)
    for a in sorted(correct):
        for b in sorted(correct):
            if a != b and (a, b) not in edges and rng.random() < extra_edge_prob:
                edges.add((a, b))
    truth = make_graph(correct, edges)
    crash_times = {c: rng.randint(1, 10 * k_period) for c in sorted(crashed)}
    adversary = []
    for a in sorted(correct):
        for b in sorted(correct):
            if a != b and (a, b) not in edges:
                adversary += escalating_stalls(
                    (a, b), rng.randint(0, 4 * k_period), horizon, k_period,
                    base=rng.randint(4 * delta, 8 * delta), step=rng.randint(2, 6), quiet=k_period,
                )
    return Scenario(
        n=n, family=family, truth=truth, delta=delta, k_period=k_period, rbcast_bound=delta,
        crash_times=crash_times, adversary=tuple(adversary), horizon=horizon,
        seed=rng.getrandbits(32),
    )


# -- adversarial schedules -------------------------------------------------

@dataclass
class AdversaryScript:
    name: str
    scenario: Scenario
    expected: dict
    algo: str = "basic"


def output_sequence(trace: Trace, process: int, after: int = 0) -> list:
    """Outputs of `process` from tick `after` on, starting with the one it held then."""
    current = None
    seq = []
    for e in trace.events:
        if e.process != process or e.kind != OUTPUT_CHANGE:
            continue
        if e.tick <= after:
            current = e.output
        else:
            seq.append(e.output)
    return [current] + seq


def count_alternations(values: list, a, b) -> int:
    """Switches between `a` and `b` in `values`, ignoring anything else."""
    kept = [v for v in values if v == a or v == b]
    return sum(1 for x, y in zip(kept, kept[1:]) if x != y)


def _check_flips(flips: int):
    if isinstance(flips, bool) or not isinstance(flips, int) or flips < 1:
        raise InputError(f"flips must be a positive integer, got {flips!r}")


def _stall_untimely(truth: TimelinessGraph, n: int, horizon: int, k: int, base: int, step: int):
    adv = []
    for a in range(n):
        for b in range(n):
            if a != b and (a, b) not in truth.edgeset:
                adv += escalating_stalls((a, b), (3 * a + b) % (2 * k), horizon, k, base, step, k)
    return adv


def pair_counterexample(
    flips: int, delta: int = 60, k_period: int = 2, warmup: int = 200, max_horizon: int = 10_000
) -> AdversaryScript:
    """Schedule making process 4 switch between the two timely pairs under A(PAIR).

    Both pairs stay timely throughout. Whichever pair process 4 currently
    outputs gets its two links slowed to exactly delta for one period at a
    time, which its endpoints read as missed heartbeats, until process 4
    moves to the other pair. The phases are found by running the schedule
    and are stored as directives so the scenario replays on its own.
    """
    _check_flips(flips)
    n = 5
    family = generate_family("PAIR", n)
    truth = make_graph(range(n), [(0, 1), (1, 0), (2, 3), (3, 2)])
    pairs = (make_graph(range(n), [(0, 1), (1, 0)]), make_graph(range(n), [(2, 3), (3, 2)]))
    base = _stall_untimely(truth, n, max_horizon, k_period, 4 * delta, 8)
    draft = Scenario(
        n=n, family=family, truth=truth, delta=delta, k_period=k_period, rbcast_bound=2,
        adversary=tuple(base), horizon=max_horizon, seed=0, jitter=2,
    )
    sim = build_simulation(draft, BasicProtocol)
    run(sim, warmup)
    leader = sim.procs[4].output
    if leader not in pairs:
        raise CapacityError("process 4 did not settle on a timely pair during warm-up")
    pulses = []
    switches = 0
    phase = 3 * delta
    while switches < flips:
        t = sim.now
        if t + phase >= max_horizon:
            raise CapacityError(f"{flips} switches do not fit in {max_horizon} ticks")
        for link in leader.edges:
            d = DelayDirective(link, (t, t + k_period - 1), delta)
            sim.add_directive(d)
            pulses.append(d)
        while sim.now < t + phase:
            sim.advance()
        if sim.procs[4].output != leader and sim.procs[4].output in pairs:
            leader = sim.procs[4].output
            switches += 1
    horizon = sim.now + phase
    scenario = replace(draft, adversary=tuple(base + pulses), horizon=horizon)
    expected = {
        "process": 4,
        "between": [format_graph(g) for g in pairs],
        "after": warmup,
        "min_alternations": flips,
    }
    return AdversaryScript("pair", scenario, expected, "basic")


def tree_nonexact_counterexample(
    flips: int, delta: int = 3, k_period: int = 5, max_horizon: int = 10_000
) -> AdversaryScript:
    """Schedule on which process 0 keeps losing and regaining trust in process 2.

    Process 2 is correct but its outgoing links are slow in growing bursts,
    so at process 0 it looks alternately crashed and alive. A process that
    insists on an exact output must keep switching between a tree with 2 and
    one without it.
    """
    _check_flips(flips)
    n = 3
    family = generate_family("TREE", n)
    truth = make_graph(range(n), [(0, 1), (0, 2)])
    warmup = 20 * k_period
    with_2, without_2 = frozenset({0, 1, 2}), frozenset({0, 1})
    horizon = 500
    while True:
        horizon = min(2 * horizon, max_horizon)
        adv = _stall_untimely(truth, n, horizon, k_period, 8 * delta, 4)
        scenario = Scenario(
            n=n, family=family, truth=truth, delta=delta, k_period=k_period,
            rbcast_bound=delta, adversary=tuple(adv), horizon=horizon, seed=0,
        )
        seq = output_sequence(run_scenario(scenario, "strawman"), 0, warmup)
        got = count_alternations([g.nodeset if g else None for g in seq], with_2, without_2)
        if got >= flips:
            break
        if horizon >= max_horizon:
            raise CapacityError(f"{flips} alternations do not fit in {max_horizon} ticks")
    expected = {
        "process": 0,
        "between": [sorted(with_2), sorted(without_2)],
        "after": warmup,
        "min_alternations": flips,
    }
    return AdversaryScript("tree", scenario, expected, "strawman")


def replay_alternations(script: AdversaryScript, algo: Optional[str] = None) -> int:
    """Run a script and count the alternations its expectation talks about."""
    exp = script.expected
    trace = run_scenario(script.scenario, algo or script.algo)
    seq = output_sequence(trace, exp["process"], exp["after"])
    if script.name == "pair":
        a, b = exp["between"]
        return count_alternations([format_graph(g) for g in seq], a, b)
    a, b = (frozenset(x) for x in exp["between"])
    return count_alternations([g.nodeset if g else None for g in seq], a, b)
