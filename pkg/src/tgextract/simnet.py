"""Deterministic lock-step simulation of crash-prone processes over FIFO links.

One global tick = one atomic step of every live process. Within a step a
process handles point-to-point deliveries, then reliable-broadcast
deliveries, then expired timers, then (every K ticks) its periodic task.
Everything random is drawn from one seeded generator in a fixed order, so a
(scenario, protocol) pair always produces the same trace.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

import numpy as np

from .graphs import (
    GraphFamily,
    StructuralError,
    TimelinessGraph,
    format_graph,
    generate_family,
    parse_graph,
)

log = logging.getLogger(__name__)

SEND = "SEND"
DELIVER = "DELIVER"
RB_DELIVER = "RB_DELIVER"
TIMER_EXPIRE = "TIMER_EXPIRE"
CRASH = "CRASH"
OUTPUT_CHANGE = "OUTPUT_CHANGE"
COUNTER_REGRESSION = "COUNTER_REGRESSION"
NOTE = "NOTE"
META = "META"


class ConfigError(ValueError):
    """Scenario validation failure; `field` names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# -- scenario --------------------------------------------------------------

@dataclass(frozen=True)
class DelayDirective:
    """Messages sent on `link` during `window` take at least `min_delay` ticks."""

    link: tuple[int, int]
    window: tuple[int, int]
    min_delay: int
    include_rbcast: bool = False

    def covers(self, tick: int) -> bool:
        return self.window[0] <= tick <= self.window[1]


@dataclass(frozen=True)
class Scenario:
    n: int
    family: GraphFamily
    truth: TimelinessGraph
    delta: int = 3
    k_period: int = 5
    rbcast_bound: int = 3
    crash_times: dict = field(default_factory=dict)
    adversary: tuple = ()
    horizon: int = 0
    seed: int = 0
    jitter: Optional[int] = None
    rbcast_drop_on_crash: bool = False

    @property
    def correct(self) -> frozenset:
        return frozenset(p for p in range(self.n) if p not in self.crash_times)

    def validate(self):
        if self.n < 1:
            raise ConfigError("n", "must be at least 1")
        if self.family.n != self.n:
            raise ConfigError("family", f"family universe {self.family.n} differs from n={self.n}")
        if not self.family.members:
            raise ConfigError("family", "family is empty")
        for name in ("delta", "k_period", "rbcast_bound", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.jitter is not None and not 1 <= self.jitter <= self.delta:
            raise ConfigError("jitter", "must lie in [1, delta]")
        for p, t in self.crash_times.items():
            if not 0 <= p < self.n:
                raise ConfigError("crash_times", f"unknown process {p}")
            if t < 1:
                raise ConfigError("crash_times", f"crash tick of process {p} must be >= 1")
        for a, b in self.truth.edges:
            if a not in self.truth.nodeset or b not in self.truth.nodeset:
                raise ConfigError("truth", f"edge ({a},{b}) touches a faulty process")
        if set(self.truth.nodes) != set(self.correct):
            raise ConfigError(
                "truth",
                f"node set {list(self.truth.nodes)} must equal the correct set {sorted(self.correct)}",
            )
        for d in self.adversary:
            a, b = d.link
            if a == b or not (0 <= a < self.n and 0 <= b < self.n):
                raise ConfigError("adversary", f"bad link {d.link}")
            if d.window[0] > d.window[1] or d.window[0] < 0:
                raise ConfigError("adversary", f"bad window {d.window}")
            if d.min_delay < 0:
                raise ConfigError("adversary", "min_delay must be non-negative")
            if d.link in self.truth.edgeset and d.min_delay > self.delta:
                raise ConfigError(
                    "adversary", f"directive on timely link {d.link} would exceed delta={self.delta}"
                )


def default_horizon(n: int, k_period: int, delta: int) -> int:
    return 10 * n * k_period * delta


def scenario_to_dict(s: Scenario) -> dict:
    fam: dict[str, Any] = {"name": s.family.name}
    if s.family.name == "CUSTOM":
        fam["members"] = [format_graph(g) for g in s.family.members]
    return {
        "n": s.n,
        "family": fam,
        "truth": format_graph(s.truth),
        "delta": s.delta,
        "k_period": s.k_period,
        "rbcast_bound": s.rbcast_bound,
        "crash_times": {str(p): t for p, t in sorted(s.crash_times.items())},
        "adversary": [
            {
                "link": list(d.link),
                "window": list(d.window),
                "min_delay": d.min_delay,
                "include_rbcast": d.include_rbcast,
            }
            for d in s.adversary
        ],
        "horizon": s.horizon,
        "seed": s.seed,
        "jitter": s.jitter,
        "rbcast_drop_on_crash": s.rbcast_drop_on_crash,
    }


_SCENARIO_KEYS = {
    "n", "family", "truth", "delta", "k_period", "rbcast_bound", "crash_times",
    "adversary", "horizon", "seed", "jitter", "rbcast_drop_on_crash",
}


def _int_field(raw: dict, name: str, default=None) -> int:
    v = raw.get(name, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    return v


def scenario_from_dict(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("scenario", "top level must be an object")
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    for required in ("n", "family", "truth"):
        if required not in raw:
            raise ConfigError(required, "missing required field")
    n = _int_field(raw, "n")
    delta = _int_field(raw, "delta", 3)
    k = _int_field(raw, "k_period", 5)

    fam_raw = raw["family"]
    if isinstance(fam_raw, str):
        fam_raw = {"name": fam_raw}
    if not isinstance(fam_raw, dict) or "name" not in fam_raw:
        raise ConfigError("family", "expected an object with a name")
    try:
        name = str(fam_raw["name"]).upper()
        if name == "CUSTOM":
            family = GraphFamily.custom(n, [parse_graph(t) for t in fam_raw.get("members", [])])
        else:
            family = generate_family(name, n)
    except (StructuralError, ValueError) as e:
        raise ConfigError("family", str(e)) from None

    try:
        truth = parse_graph(raw["truth"]) if isinstance(raw["truth"], str) else None
    except StructuralError as e:
        raise ConfigError("truth", str(e)) from None
    if truth is None:
        raise ConfigError("truth", "expected graph text")

    crash_raw = raw.get("crash_times", {}) or {}
    if not isinstance(crash_raw, dict):
        raise ConfigError("crash_times", "expected a mapping process -> tick")
    try:
        crash_times = {int(p): int(t) for p, t in crash_raw.items()}
    except (TypeError, ValueError):
        raise ConfigError("crash_times", "process ids and ticks must be integers") from None

    adversary = []
    for i, d in enumerate(raw.get("adversary", []) or []):
        try:
            adversary.append(
                DelayDirective(
                    link=(int(d["link"][0]), int(d["link"][1])),
                    window=(int(d["window"][0]), int(d["window"][1])),
                    min_delay=int(d["min_delay"]),
                    include_rbcast=bool(d.get("include_rbcast", False)),
                )
            )
        except (KeyError, TypeError, ValueError, IndexError):
            raise ConfigError("adversary", f"malformed directive #{i}") from None

    jitter = raw.get("jitter")
    if jitter is not None:
        jitter = _int_field(raw, "jitter")
    s = Scenario(
        n=n,
        family=family,
        truth=truth,
        delta=delta,
        k_period=k,
        rbcast_bound=_int_field(raw, "rbcast_bound", delta),
        crash_times=crash_times,
        adversary=tuple(adversary),
        horizon=_int_field(raw, "horizon", default_horizon(n, k, delta)),
        seed=_int_field(raw, "seed", 0),
        jitter=jitter,
        rbcast_drop_on_crash=bool(raw.get("rbcast_drop_on_crash", False)),
    )
    s.validate()
    return s


def dump_scenario(s: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(s), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("scenario", f"not valid JSON ({e})") from None
    return scenario_from_dict(raw)


def scenario_digest(s: Scenario) -> str:
    blob = json.dumps(scenario_to_dict(s), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# -- protocol interface ----------------------------------------------------

@dataclass(frozen=True)
class Send:
    to: int
    msg: Any


@dataclass(frozen=True)
class Rbcast:
    msg: Any


@dataclass(frozen=True)
class SetTimer:
    peer: int
    ticks: int


class Protocol:
    """Per-process automaton driven by a Simulation.

    Handlers mutate the process state and return a list of actions
    (Send, Rbcast, SetTimer) for the simulator to carry out.
    """

    algo_name = "protocol"

    def __init__(self, pid: int, scenario: Scenario):
        self.pid = pid
        self.n = scenario.n

    output: Optional[TimelinessGraph] = None

    def init(self) -> list:
        return []

    def on_periodic(self) -> list:
        return []

    def on_message(self, sender: int, msg) -> list:
        return []

    def on_rb_deliver(self, origin: int, msg) -> list:
        return []

    def on_expire(self, peer: int) -> list:
        return []

    def counters(self) -> Optional[np.ndarray]:
        return None


# -- trace -----------------------------------------------------------------

@dataclass(slots=True)
class TraceEvent:
    tick: int
    process: int
    kind: str
    detail: dict
    output: Optional[TimelinessGraph]

    def to_record(self) -> dict:
        return {
            "tick": self.tick,
            "process": self.process,
            "kind": self.kind,
            "detail": self.detail,
            "output": format_graph(self.output),
        }


@dataclass
class Trace:
    meta: dict
    events: list = field(default_factory=list)

    def lines(self) -> Iterable[str]:
        head = {"tick": 0, "process": -1, "kind": META, "detail": self.meta, "output": None}
        yield _dumps(head)
        for e in self.events:
            yield _dumps(e.to_record())

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")

    @classmethod
    def read(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    @classmethod
    def loads(cls, text: str) -> "Trace":
        meta = None
        events = []
        for i, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["kind"] == META:
                meta = rec["detail"]
                continue
            out = rec.get("output")
            events.append(
                TraceEvent(
                    rec["tick"], rec["process"], rec["kind"], rec["detail"],
                    parse_graph(out) if out is not None else None,
                )
            )
        if meta is None:
            raise ValueError("trace has no META header")
        return cls(meta, events)


def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# -- simulation ------------------------------------------------------------

@dataclass(slots=True)
class Envelope:
    kind: str
    payload: Any
    frm: int
    to: int
    send_tick: int
    deliver_tick: int
    seq: int


ProtocolFactory = Callable[[int, Scenario], Protocol]


class Simulation:
    def __init__(self, scenario: Scenario, protocol: ProtocolFactory):
        self.scenario = scenario
        self.n = scenario.n
        self.rng = random.Random(scenario.seed)
        self.procs = [protocol(p, scenario) for p in range(self.n)]
        self.algo_name = getattr(protocol, "algo_name", getattr(protocol, "__name__", "protocol"))
        self.now = 0
        self.initialized = False
        self.crashed: set[int] = set()
        self.inbox: dict[tuple[int, int], list[Envelope]] = defaultdict(list)
        self.rb_inbox: dict[tuple[int, int], list] = defaultdict(list)
        self.timers: dict[tuple[int, int], int] = {}
        self.timer_due: dict[tuple[int, int], set] = defaultdict(set)
        self.next_seq: dict[tuple[int, int], int] = defaultdict(int)
        self.last_deliver: dict[tuple[int, int], int] = {}
        self.next_bid = 0
        self._outputs: list[Optional[TimelinessGraph]] = [None] * self.n
        self._counters: list[Optional[np.ndarray]] = [None] * self.n
        by_link: dict[tuple[int, int], list[DelayDirective]] = defaultdict(list)
        for d in scenario.adversary:
            by_link[d.link].append(d)
        # per link: window starts (sorted), directives, longest window
        self._directives = {}
        for link, ds in by_link.items():
            ds.sort(key=lambda d: d.window)
            span = max(d.window[1] - d.window[0] for d in ds)
            self._directives[link] = ([d.window[0] for d in ds], ds, span)
        self.trace = Trace(
            {
                "algo": self.algo_name,
                "n": self.n,
                "seed": scenario.seed,
                "scenario": scenario_digest(scenario),
                "horizon": 0,
            }
        )
        self._tick_events: list[TraceEvent] = []

    def add_directive(self, d: DelayDirective):
        """Schedule an extra directive for a window that has not started yet.

        The run so far is unaffected, so a scenario carrying the directive
        from the start replays the same prefix.
        """
        if d.window[0] < self.now:
            raise ConfigError("adversary", f"window {d.window} starts before tick {self.now}")
        starts, ds, _ = self._directives.get(d.link, ([], [], 0))
        ds = sorted(ds + [d], key=lambda x: x.window)
        span = max(x.window[1] - x.window[0] for x in ds)
        self._directives[d.link] = ([x.window[0] for x in ds], ds, span)

    # -- bookkeeping

    def _emit(self, p: int, kind: str, detail: dict):
        ev = TraceEvent(self.now, p, kind, detail, self.procs[p].output if p >= 0 else None)
        self.trace.events.append(ev)
        self._tick_events.append(ev)

    def _after_handler(self, p: int):
        out = self.procs[p].output
        if out != self._outputs[p]:
            self._outputs[p] = out
            self._emit(p, OUTPUT_CHANGE, {})

    def _audit(self, p: int):
        cur = self.procs[p].counters()
        if cur is None:
            return
        prev = self._counters[p]
        if prev is not None and prev.shape == cur.shape and np.any(cur < prev):
            bad = np.flatnonzero(cur < prev)[:5].tolist()
            self._emit(p, COUNTER_REGRESSION, {"indices": bad})
        self._counters[p] = cur.copy()

    def _min_delay(self, link, tick, rb: bool) -> int:
        entry = self._directives.get(link)
        if entry is None:
            return 0
        starts, ds, span = entry
        md = 0
        i = bisect.bisect_right(starts, tick) - 1
        while i >= 0 and starts[i] >= tick - span:
            d = ds[i]
            if d.covers(tick) and (d.include_rbcast or not rb):
                md = max(md, d.min_delay)
            i -= 1
        return md

    def _cap(self, tick: int) -> int:
        # deliveries to correct receivers must land inside the run
        return max(self.now + 1, self.scenario.horizon - 1)

    # -- actions

    def send(self, p: int, q: int, msg):
        s = self.scenario
        if p in self.crashed:
            self._emit(p, NOTE, {"ignored_send_to": q})
            return
        link = (p, q)
        timely = link in s.truth.edgeset
        if timely:
            d = self.rng.randint(1, s.jitter or s.delta)
        else:
            d = self.rng.randint(1, 4 * s.delta)
        d = max(d, self._min_delay(link, self.now, rb=False))
        if timely:
            d = min(d, s.delta)
        at = min(self.now + d, self._cap(self.now))
        at = max(at, self.last_deliver.get(link, 0))
        self.last_deliver[link] = at
        seq = self.next_seq[link]
        self.next_seq[link] = seq + 1
        env = Envelope(msg.kind, msg, p, q, self.now, at, seq)
        self.inbox[(at, q)].append(env)
        self._emit(p, SEND, {"to": q, "msg": msg.encode(), "seq": seq, "deliver": at})

    def rbcast(self, p: int, msg):
        s = self.scenario
        bid = self.next_bid
        self.next_bid += 1
        crash = s.crash_times.get(p)
        dropped = (
            s.rbcast_drop_on_crash and crash is not None and crash <= self.now + s.rbcast_bound
        )
        self._emit(p, SEND, {"to": "*", "msg": msg.encode(), "bid": bid, "dropped": dropped})
        if dropped:
            return
        for r in range(self.n):
            d = self.rng.randint(1, s.rbcast_bound)
            if r != p:
                d = max(d, self._min_delay((p, r), self.now, rb=True))
            at = min(self.now + d, self._cap(self.now))
            self.rb_inbox[(at, r)].append((p, bid, msg, self.now))

    def set_timer(self, p: int, q: int, ticks: int):
        at = self.now + max(1, int(ticks))
        self.timers[(p, q)] = at
        self.timer_due[(at, p)].add(q)

    def _apply(self, p: int, actions):
        for a in actions or ():
            if isinstance(a, Send):
                self.send(p, a.to, a.msg)
            elif isinstance(a, Rbcast):
                self.rbcast(p, a.msg)
            elif isinstance(a, SetTimer):
                self.set_timer(p, a.peer, a.ticks)
            else:
                raise TypeError(f"unknown action {a!r}")

    # -- stepping

    def initialize(self) -> list[TraceEvent]:
        if self.initialized:
            return []
        self.initialized = True
        self._tick_events = []
        for p, proc in enumerate(self.procs):
            self._apply(p, proc.init())
            self._after_handler(p)
            self._audit(p)
        return self._tick_events

    def _step(self, p: int):
        t = self.now
        proc = self.procs[p]
        envs = self.inbox.pop((t, p), None)
        if envs:
            envs.sort(key=lambda e: (e.frm, e.seq))
            for e in envs:
                self._emit(p, DELIVER, {"from": e.frm, "msg": e.payload.encode(), "seq": e.seq, "sent": e.send_tick})
                self._apply(p, proc.on_message(e.frm, e.payload))
                self._after_handler(p)
        rbs = self.rb_inbox.pop((t, p), None)
        if rbs:
            rbs.sort(key=lambda r: (r[0], r[1]))
            for origin, bid, msg, sent in rbs:
                self._emit(p, RB_DELIVER, {"from": origin, "msg": msg.encode(), "bid": bid, "sent": sent})
                self._apply(p, proc.on_rb_deliver(origin, msg))
                self._after_handler(p)
        due = self.timer_due.pop((t, p), None)
        if due:
            for q in sorted(due):
                if self.timers.get((p, q)) != t:
                    continue
                del self.timers[(p, q)]
                self._emit(p, TIMER_EXPIRE, {"peer": q})
                self._apply(p, proc.on_expire(q))
                self._after_handler(p)
        if t % self.scenario.k_period == 0:
            self._apply(p, proc.on_periodic())
            self._after_handler(p)
        self._audit(p)

    def advance(self) -> list[TraceEvent]:
        if not self.initialized:
            self.initialize()
        self._tick_events = []
        t = self.now
        for p, ct in sorted(self.scenario.crash_times.items()):
            if ct == t:
                self.crashed.add(p)
                self._emit(p, CRASH, {})
        for p in range(self.n):
            if p in self.crashed:
                self.inbox.pop((t, p), None)
                self.rb_inbox.pop((t, p), None)
                self.timer_due.pop((t, p), None)
                continue
            self._step(p)
        self.now += 1
        self.trace.meta["horizon"] = self.now
        return self._tick_events


def build_simulation(s: Scenario, protocol: ProtocolFactory) -> Simulation:
    s.validate()
    return Simulation(s, protocol)


def run(sim: Simulation, horizon: Optional[int] = None) -> Trace:
    """Initialize (if needed) and advance until `horizon` ticks have elapsed."""
    h = sim.scenario.horizon if horizon is None else horizon
    if h > sim.scenario.horizon:
        raise ConfigError("horizon", f"{h} exceeds the scenario horizon {sim.scenario.horizon}")
    sim.initialize()
    while sim.now < h:
        sim.advance()
    return sim.trace
