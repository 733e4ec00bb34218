"""General extraction algorithm: accusation counters over every family member.

Each process heartbeats all peers, accuses links whose heartbeat timer
expires (growing its timeout estimate each time), periodically accuses every
member that omits itself, and outputs the member with the lexicographically
least (counter, member) pair.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graphs import GraphFamily
from .simnet import ConfigError, Protocol, Rbcast, Scenario, Send, SetTimer


@dataclass(frozen=True)
class Alive:
    kind = "ALIVE"

    def encode(self) -> str:
        return "ALIVE"


ALIVE = Alive()


@dataclass(frozen=True)
class LinkAcc:
    """Accusation of the link (q, h), or of h's absence when q is None."""

    q: Optional[int]
    h: int
    kind = "ACC"

    def encode(self) -> str:
        q = "⊥" if self.q is None else self.q
        return f"ACC{{q:{q},h:{self.h}}}"


@dataclass(frozen=True)
class FamilyMasks:
    lacks_node: tuple  # h -> bool[M], members without node h
    has_edge: dict  # (q, h) -> bool[M]


@functools.lru_cache(maxsize=32)
def family_masks(family: GraphFamily) -> FamilyMasks:
    m = len(family.members)
    n = family.n
    lacks = []
    for h in range(n):
        lacks.append(np.fromiter((h not in g.nodeset for g in family.members), bool, m))
    edge = {}
    for q in range(n):
        for h in range(n):
            if q != h:
                edge[(q, h)] = np.fromiter(((q, h) in g.edgeset for g in family.members), bool, m)
    return FamilyMasks(tuple(lacks), edge)


class BasicProtocol(Protocol):
    algo_name = "basic"

    def __init__(self, pid: int, scenario: Scenario):
        super().__init__(pid, scenario)
        self.family = scenario.family
        if not self.family.members:
            raise ConfigError("family", "empty family")
        self.masks = family_masks(self.family)
        self.peers = [q for q in range(self.n) if q != pid]
        self.acc = np.zeros(len(self.family.members), dtype=np.int64)
        self.delta_est = {q: 1 for q in self.peers}
        self.choice = 0
        self.output = None

    def select(self) -> int:
        return int(np.argmin(self.acc))

    def update_output(self):
        self.choice = self.select()
        self.output = self.family.members[self.choice]

    def counters(self):
        return self.acc

    def init(self):
        self.update_output()
        return [SetTimer(q, self.delta_est[q]) for q in self.peers]

    def on_periodic(self):
        acts = [Send(q, ALIVE) for q in self.peers]
        acts.append(Rbcast(LinkAcc(None, self.pid)))
        return acts

    def on_message(self, sender, msg):
        if msg.kind == "ALIVE":
            return [SetTimer(sender, self.delta_est[sender])]
        return []

    def on_expire(self, q):
        self.delta_est[q] += 1
        return [Rbcast(LinkAcc(q, self.pid)), SetTimer(q, self.delta_est[q])]

    def on_rb_deliver(self, origin, msg):
        if msg.q is None:
            self.acc[self.masks.lacks_node[msg.h]] += 1
        else:
            self.acc[self.masks.has_edge[(msg.q, msg.h)]] += 1
        self.update_output()
        return []


class ExactModeProtocol(BasicProtocol):
    """Strawman that insists on exactness.

    It only outputs members whose node set equals the processes it currently
    trusts: itself plus every peer heard from since that peer's timer last
    expired. Used to exhibit forced output alternation.
    """

    algo_name = "strawman"

    def __init__(self, pid: int, scenario: Scenario):
        super().__init__(pid, scenario)
        self.trusted = {pid}
        self._by_nodes: dict[frozenset, np.ndarray] = {}
        for i, g in enumerate(self.family.members):
            self._by_nodes.setdefault(g.nodeset, []).append(i)
        self._by_nodes = {k: np.asarray(v) for k, v in self._by_nodes.items()}

    def select(self) -> int:
        idx = self._by_nodes.get(frozenset(self.trusted))
        if idx is None:
            return self.choice
        return int(idx[np.argmin(self.acc[idx])])

    def on_message(self, sender, msg):
        acts = super().on_message(sender, msg)
        if msg.kind == "ALIVE" and sender not in self.trusted:
            self.trusted.add(sender)
            self.update_output()
        return acts

    def on_expire(self, q):
        self.trusted.discard(q)
        acts = super().on_expire(q)
        self.update_output()
        return acts
