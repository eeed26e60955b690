"""Messages, actions and quorum bookkeeping shared by every protocol automaton."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional


class ProtocolMisuse(RuntimeError):
    """An operation was invoked while another one by the same process is pending."""


class TaggedValue(NamedTuple):
    seq: int
    val: Any


def max_tagged(values) -> TaggedValue:
    """Entry with the largest sequence number; first one wins on ties."""
    best = None
    for tv in values:
        if best is None or tv.seq > best.seq:
            best = tv
    return best


def precedes(v1, v2) -> bool:
    return all(a.seq <= b.seq for a, b in zip(v1, v2))


def same_seqs(v1, v2) -> bool:
    return all(a.seq == b.seq for a, b in zip(v1, v2))


@dataclass(frozen=True, slots=True)
class Message:
    kind: str
    src: int
    dst: int
    seq: int
    xid: int
    payload: Any = None
    inst: Any = None

    @property
    def is_ack(self) -> bool:
        return self.kind.startswith("Ack")


# --- actions emitted by automata --------------------------------------------

@dataclass(frozen=True, slots=True)
class Send:
    msg: Message


@dataclass(frozen=True, slots=True)
class MemoryWrite:
    inst: Any
    mem: int
    value: Any


@dataclass(frozen=True, slots=True)
class MemoryRead:
    inst: Any
    mem: int
    owner: int


@dataclass(frozen=True, slots=True)
class FlipCoin:
    pass


@dataclass(frozen=True, slots=True)
class Respond:
    result: Any


@dataclass(frozen=True, slots=True)
class Note:
    """Boundary marker for a sub-operation (collect, SDC, ...); never affects execution."""

    edge: str  # "begin" | "end" | "point"
    kind: str
    nid: int
    data: Any = None


# --- quorum rules -----------------------------------------------------------

@dataclass(frozen=True)
class CountAtLeast:
    need: int

    def satisfied(self, responders, represented) -> bool:
        return len(responders) >= self.need


@dataclass(frozen=True)
class RepresentedAtLeast:
    need: int
    cluster_of: tuple  # cluster_of[p] = frozenset of p's cluster

    def satisfied(self, responders, represented) -> bool:
        return len(represented) >= self.need


@dataclass
class ExchangeState:
    tag: str
    seq: int
    xid: int
    rule: Any
    inst: Any = None
    responses: dict = field(default_factory=dict)
    represented: set = field(default_factory=set)
    complete: bool = False

    def matches(self, msg: Message) -> bool:
        return msg.kind == "Ack" + self.tag and msg.xid == self.xid and msg.inst == self.inst


def exchange_step(ex: ExchangeState, ack: Message) -> bool:
    """Record ``ack``; return True exactly when this ack completes the exchange."""
    if ex.complete or not ex.matches(ack) or ack.src in ex.responses:
        return False
    ex.responses[ack.src] = ack.payload
    if isinstance(ex.rule, RepresentedAtLeast):
        ex.represented |= ex.rule.cluster_of[ack.src]
    if ex.rule.satisfied(ex.responses, ex.represented):
        ex.complete = True
        return True
    return False


@dataclass(frozen=True)
class NodeContext:
    """What one process knows about the system it runs in."""

    pid: int
    n: int
    f: int
    readable: tuple  # (mem, owner) for every cell this process may read
    writable: tuple  # memories this process may write
    rule: Any


class Automaton:
    """Common plumbing; subclasses implement the handlers."""

    def __init__(self, ctx: NodeContext):
        self.ctx = ctx
        self.xid = 0
        self.ex: Optional[ExchangeState] = None

    def _broadcast(self, tag, seq, payload=None, inst=None) -> list:
        self.xid += 1
        self.ex = ExchangeState(tag, seq, self.xid, self.ctx.rule, inst)
        pid = self.ctx.pid
        return [Send(Message(tag, pid, q, seq, self.xid, payload, inst)) for q in range(self.ctx.n)]

    def _ack(self, msg: Message, payload=None) -> Send:
        return Send(Message("Ack" + msg.kind, self.ctx.pid, msg.src, msg.seq, msg.xid, payload, msg.inst))

    def on_invoke(self, kind: str, arg=None) -> list:
        raise NotImplementedError

    def on_message(self, msg: Message) -> list:
        raise NotImplementedError

    def on_read_result(self, action: MemoryRead, content) -> list:
        raise NotImplementedError

    def on_flip(self, value: int) -> list:
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.__dict__ == other.__dict__

    __hash__ = None


def transition(state: Automaton, event: tuple):
    """Pure form of the automaton step: ``(state, event) -> (state', actions)``.

    ``event`` is one of ``("invoke", kind, arg)``, ``("deliver", msg)``,
    ``("read", action, content)`` or ``("flip", value)``. The input state is
    left untouched.
    """
    new = copy.deepcopy(state)
    tag = event[0]
    if tag == "invoke":
        actions = new.on_invoke(event[1], event[2])
    elif tag == "deliver":
        actions = new.on_message(event[1])
    elif tag == "read":
        actions = new.on_read_result(event[1], event[2])
    elif tag == "flip":
        actions = new.on_flip(event[1])
    else:
        raise ValueError(f"unknown event {tag!r}")
    return new, actions
