"""Efficient extraction for dicut-closed families whose members have a root.

Only roots propose graphs. A proposal travels point-to-point along the
proposed graph (and directly to every process outside it), accusations are
reliably broadcast and tagged with the proposal epoch so a root can discard
stale ones, and heartbeats flow only along edges of current candidates.
Once the run settles, all traffic follows the edges of the extracted graph.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graphs import GraphFamily, TimelinessGraph, format_graph, root_of
from .simnet import ConfigError, Protocol, Rbcast, Scenario, Send, SetTimer
from .algo_basic import ALIVE

_NONE = (float("inf"), float("inf"))


@dataclass(frozen=True)
class New:
    x: TimelinessGraph
    a: int
    pr: int
    d: int
    kind = "NEW"

    def encode(self) -> str:
        return f"NEW{{x:{format_graph(self.x)},a:{self.a},pr:{self.pr},d:{self.d}}}"


@dataclass(frozen=True)
class CandAcc:
    x: TimelinessGraph
    a: int
    pr: int
    d: int
    kind = "ACC"

    def encode(self) -> str:
        return f"ACC{{x:{format_graph(self.x)},a:{self.a},pr:{self.pr},d:{self.d}}}"


@functools.lru_cache(maxsize=32)
def member_roots(family: GraphFamily) -> tuple:
    roots = tuple(root_of(g) for g in family.members)
    for g, r in zip(family.members, roots):
        if r is None:
            raise ConfigError("family", f"member {format_graph(g)} has no root")
    return roots


class EfficientProtocol(Protocol):
    """Efficient extraction with direct proposal delivery.

    A root sends each new proposal straight to every process in addition to
    the relays along the proposed graph. Relays alone never reach the part of
    a tree hanging below a crashed node, which then can neither adopt nor
    accuse the proposal.
    """

    algo_name = "efficient"
    direct_proposals = True

    def __init__(self, pid: int, scenario: Scenario):
        super().__init__(pid, scenario)
        self.family = scenario.family
        if not self.family.members:
            raise ConfigError("family", "empty family")
        self.roots = member_roots(self.family)
        self.peers = [q for q in range(self.n) if q != pid]
        self.rooted = [i for i, r in enumerate(self.roots) if r == pid]
        self.pos = {i: k for k, i in enumerate(self.rooted)}
        k = len(self.rooted)
        self.acc = np.zeros(k, dtype=np.int64)
        self.prop = np.zeros(k, dtype=np.int64)
        self.dmember = np.full(k, self.n, dtype=np.int64)
        self.heard: dict[int, tuple[int, int]] = {}
        self.other_cand: dict[int, tuple[int, int, int]] = {}
        self.local = False
        self.me: Optional[int] = self.rooted[0] if self.rooted else None
        self.delta_est = {q: 1 for q in self.peers}
        self.output = None

    # -- helpers

    def member(self, i: int) -> TimelinessGraph:
        return self.family.members[i]

    def me_tuple(self):
        k = self.pos[self.me]
        return int(self.acc[k]), int(self.prop[k]), int(self.dmember[k])

    def candidates(self) -> dict[int, tuple[int, int, int]]:
        cands = dict(self.other_cand)
        if self.local and self.me is not None:
            cands[self.me] = self.me_tuple()
        return cands

    def counters(self):
        return np.concatenate([self.acc, self.prop])

    def update(self) -> list:
        acts: list = []
        a_min = min(((a, i) for i, (a, _, _) in self.other_cand.items()), default=_NONE)
        if self.me is not None:
            a, pr, d = self.me_tuple()
            if a_min < (a, self.me) and self.local:
                acts.append(Rbcast(CandAcc(self.member(self.me), a, pr, d)))
                self.prop[self.pos[self.me]] += 1
                self.local = False
            self.me = self.rooted[int(np.argmin(self.acc))]
            a, pr, d = self.me_tuple()
            if (a, self.me) < a_min and not self.local:
                self.local = True
                g = self.member(self.me)
                msg = New(g, a, pr, d)
                p = self.pid
                for h in self.peers:
                    if (h, p) in g.edgeset:
                        self.delta_est[h] = max(self.delta_est[h], d)
                        acts.append(SetTimer(h, self.delta_est[h]))
                    if self.direct_proposals or h not in g.nodeset or (p, h) in g.edgeset:
                        acts.append(Send(h, msg))
        cands = self.candidates()
        if cands:
            best = min(cands, key=lambda i: (cands[i][0], i))
            self.output = self.member(best)
        else:
            self.output = None
        return acts

    # -- handlers

    def init(self):
        return self.update()

    def on_periodic(self):
        p = self.pid
        targets = set()
        for i in self.candidates():
            targets.update(b for (a, b) in self.member(i).edges if a == p)
        return [Send(q, ALIVE) for q in sorted(targets)]

    def on_expire(self, q):
        p = self.pid
        acts = []
        for i, (a, pr, d) in sorted(self.other_cand.items()):
            if (q, p) in self.member(i).edgeset:
                acts.append(Rbcast(CandAcc(self.member(i), a, pr, d)))
        if self.me is not None and (q, p) in self.member(self.me).edgeset:
            acts.append(Rbcast(CandAcc(self.member(self.me), *self.me_tuple())))
        return acts

    def on_message(self, sender, msg):
        if msg.kind == "ALIVE":
            return [SetTimer(sender, self.delta_est[sender])]
        if msg.kind != "NEW":
            return []
        p = self.pid
        x = msg.x
        i = self.family.index[x]
        if p not in x.nodeset:
            return [Rbcast(CandAcc(x, msg.a, msg.pr, msg.d))]
        if self.roots[i] == p:
            return []
        fresh = (msg.a, msg.pr)
        new_cand = False
        cur = self.other_cand.get(i)
        if cur is None and self.heard.get(i, (-1, -1)) < fresh:
            new_cand = True
        if cur is not None and (cur[0], cur[1]) < fresh:
            del self.other_cand[i]
            new_cand = True
        if not new_cand:
            return []
        self.other_cand[i] = (msg.a, msg.pr, msg.d)
        acts = self.update()
        self.heard[i] = fresh
        root = self.roots[i]
        for h in self.peers:
            if (h, p) in x.edgeset:
                self.delta_est[h] = max(self.delta_est[h], msg.d)
                acts.append(SetTimer(h, self.delta_est[h]))
            if (p, h) in x.edgeset and h != root:
                acts.append(Send(h, msg))
        return acts

    def on_rb_deliver(self, origin, msg):
        i = self.family.index[msg.x]
        if self.roots[i] == self.pid:
            if i == self.me:
                k = self.pos[i]
                if msg.a == self.acc[k] and msg.pr == self.prop[k]:
                    self.acc[k] += 1
                    self.dmember[k] += 1
                    self.local = False
        else:
            if self.other_cand.get(i) == (msg.a, msg.pr, msg.d):
                del self.other_cand[i]
            if self.heard.get(i, (-1, -1)) < (msg.a, msg.pr):
                self.heard[i] = (msg.a, msg.pr)
        return self.update()


class ListingEfficientProtocol(EfficientProtocol):
    """Proposals reach members of the proposed graph only through relays."""

    algo_name = "efficient-relay"
    direct_proposals = False
