"""Single-writer multi-reader atomic register over messages plus partially shared memory."""
from __future__ import annotations

from typing import Any, Optional

from .base import (
    Automaton,
    MemoryRead,
    MemoryWrite,
    Message,
    NodeContext,
    ProtocolMisuse,
    Respond,
    TaggedValue,
    exchange_step,
    max_tagged,
    transition,
)


class RegisterNode(Automaton):
    """One process running the register protocol for writer ``writer``.

    Every process serves W/WB/R requests; the writer may invoke ``write`` and any
    process may invoke ``read``. Cells hold ``TaggedValue`` and live in the
    simulator's memory, keyed by (instance, memory, owner).
    """

    inst = None

    def __init__(self, ctx: NodeContext, writer: int = 0, v0: Any = 0):
        super().__init__(ctx)
        self.writer = writer
        self.v0 = v0
        self.w_sqno = 0
        self.r_sqno = 0
        self.last_sqno = 0
        self.phase: Optional[str] = None  # "write" | "read-r" | "read-wb"
        self.picked: Optional[TaggedValue] = None
        self.job: Optional[dict] = None

    @property
    def busy(self) -> bool:
        return self.phase is not None

    # -- client side ---------------------------------------------------------

    def on_invoke(self, kind, arg=None):
        if self.busy:
            raise ProtocolMisuse(f"p{self.ctx.pid}: {kind} invoked while {self.phase} is pending")
        if kind == "write":
            if self.ctx.pid != self.writer:
                raise ProtocolMisuse(f"p{self.ctx.pid} is not the writer")
            self.w_sqno += 1
            self.phase = "write"
            return self._broadcast("W", self.w_sqno, arg)
        if kind == "read":
            self.r_sqno += 1
            self.phase = "read-r"
            return self._broadcast("R", self.r_sqno)
        raise ProtocolMisuse(f"unknown operation {kind!r}")

    def _exchange_done(self):
        ex = self.ex
        self.ex = None
        if self.phase == "write":
            self.phase = None
            return [Respond(None)]
        if self.phase == "read-r":
            self.picked = max_tagged(ex.responses.values())
            self.phase = "read-wb"
            return self._broadcast("WB", self.picked.seq, self.picked.val)
        # write-back finished
        picked, self.picked, self.phase = self.picked, None, None
        return [Respond(picked)]

    # -- server side ---------------------------------------------------------

    def on_message(self, msg: Message):
        kind = msg.kind
        if kind == "W" or kind == "WB":
            return self.handle_write_message(msg)
        if kind == "R":
            return self.handle_read_message(msg)
        if self.ex is not None and exchange_step(self.ex, msg):
            return self._exchange_done()
        return []

    def handle_write_message(self, msg: Message):
        out = []
        if msg.seq > self.last_sqno:
            self.last_sqno = msg.seq
            tv = TaggedValue(msg.seq, msg.payload)
            out = [MemoryWrite(self.inst, mu, tv) for mu in self.ctx.writable]
        out.append(self._ack(msg))
        return out

    def handle_read_message(self, msg: Message):
        if not self.ctx.readable:
            return [self._ack(msg, TaggedValue(0, self.v0))]
        self.job = {"msg": msg, "left": len(self.ctx.readable), "best": None}
        return [MemoryRead(self.inst, mu, owner) for mu, owner in self.ctx.readable]

    def on_read_result(self, action: MemoryRead, content):
        job = self.job
        tv = content if content is not None else TaggedValue(0, self.v0)
        if job["best"] is None or tv.seq > job["best"].seq:
            job["best"] = tv
        job["left"] -= 1
        if job["left"]:
            return []
        self.job = None
        return [self._ack(job["msg"], job["best"])]


def writer_invoke_write(state: RegisterNode, v):
    """Pure form: ``(state, v) -> (state', actions)``."""
    return transition(state, ("invoke", "write", v))


def reader_invoke_read(state: RegisterNode):
    return transition(state, ("invoke", "read", None))
