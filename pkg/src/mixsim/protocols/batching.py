"""Batched multi-writer collect and successive double collect (SDC).

Each process ``p`` keeps, per instance, one vector register ``R_mu[p]`` in every
memory it can write; slot ``i`` holds the freshest ``TaggedValue`` of process
``i`` that ``p`` has seen. Client operations are expressed as a stack of frames
so that nested calls (a coin doing writes and SDCs, an SDC doing collects) stay
plain data.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

from .base import (
    Automaton,
    MemoryRead,
    MemoryWrite,
    Message,
    NodeContext,
    Note,
    ProtocolMisuse,
    Respond,
    TaggedValue,
    exchange_step,
    same_seqs,
)

DEFAULT_INST = "main"


@dataclass
class WriteFrame:
    inst: Any
    val: Any
    seq: int = 0
    nid: int = 0


@dataclass
class CollectFrame:
    inst: Any
    phase: str = "read"
    merged: Optional[tuple] = None
    nid: int = 0


@dataclass
class SdcFrame:
    inst: Any
    prev: Optional[tuple] = None
    collects: int = 0
    nid: int = 0


def merge_vectors(vectors, n: int, v0=0) -> tuple:
    """Entry-wise maximum by sequence number."""
    out = [TaggedValue(0, v0)] * n
    for vec in vectors:
        for i, tv in enumerate(vec):
            if tv.seq > out[i].seq:
                out[i] = tv
    return tuple(out)


class BatchNode(Automaton):
    def __init__(self, ctx: NodeContext, v0: Any = 0):
        super().__init__(ctx)
        self.v0 = v0
        self.last: dict = {}
        self.vec: dict = {}
        self.w_sqno: dict = {}
        self.r_sqno: dict = {}
        self.stack: list = []
        self.job: Optional[dict] = None
        self.nid = 0

    @property
    def busy(self) -> bool:
        return bool(self.stack)

    def v0_for(self, inst):
        return self.v0

    def _state(self, inst):
        if inst not in self.vec:
            self.vec[inst] = [TaggedValue(0, self.v0_for(inst))] * self.ctx.n
            self.last[inst] = [0] * self.ctx.n
        return self.vec[inst], self.last[inst]

    # -- client side ---------------------------------------------------------

    def on_invoke(self, kind, arg=None):
        if self.stack:
            raise ProtocolMisuse(f"p{self.ctx.pid}: {kind} invoked while an operation is pending")
        return self._push(self._top_frame(kind, arg))

    def _top_frame(self, kind, arg):
        if kind == "write":
            return WriteFrame(DEFAULT_INST, arg)
        if kind == "collect":
            return CollectFrame(DEFAULT_INST)
        if kind == "sdc":
            return SdcFrame(DEFAULT_INST)
        raise ProtocolMisuse(f"unknown operation {kind!r}")

    def _push(self, frame) -> list:
        self.nid += 1
        frame.nid = self.nid
        self.stack.append(frame)
        return self._enter(frame)

    def _enter(self, frame) -> list:
        if isinstance(frame, WriteFrame):
            seq = self.w_sqno.get(frame.inst, 0) + 1
            self.w_sqno[frame.inst] = seq
            frame.seq = seq
            out = [Note("begin", "bwrite", frame.nid, {"inst": frame.inst, "seq": seq, "val": frame.val})]
            return out + self._broadcast("BW", seq, frame.val, frame.inst)
        if isinstance(frame, CollectFrame):
            seq = self.r_sqno.get(frame.inst, 0) + 1
            self.r_sqno[frame.inst] = seq
            out = [Note("begin", "collect", frame.nid, {"inst": frame.inst})]
            return out + self._broadcast("BR", seq, None, frame.inst)
        if isinstance(frame, SdcFrame):
            return [Note("begin", "sdc", frame.nid, {"inst": frame.inst})] + self._push(CollectFrame(frame.inst))
        raise TypeError(frame)

    def _pop(self, result) -> list:
        frame = self.stack.pop()
        out = [Note("end", self._kind(frame), frame.nid, self._end_data(frame, result))]
        if self.stack:
            out += self._resume(self.stack[-1], result)
        else:
            out.append(Respond(result))
        return out

    def _kind(self, frame) -> str:
        return {WriteFrame: "bwrite", CollectFrame: "collect", SdcFrame: "sdc"}[type(frame)]

    def _end_data(self, frame, result):
        if isinstance(frame, WriteFrame):
            return {"inst": frame.inst, "seq": frame.seq}
        if isinstance(frame, SdcFrame):
            return {"inst": frame.inst, "vector": result, "collects": frame.collects}
        return {"inst": frame.inst, "vector": result}

    def _resume(self, frame, result) -> list:
        if isinstance(frame, SdcFrame):
            frame.collects += 1
            if frame.prev is not None and same_seqs(frame.prev, result):
                return self._pop(result)
            frame.prev = result
            return self._push(CollectFrame(frame.inst))
        raise TypeError(frame)

    def _exchange_done(self) -> list:
        ex, self.ex = self.ex, None
        frame = self.stack[-1]
        if isinstance(frame, WriteFrame):
            return self._pop(frame.seq)
        if frame.phase == "read":
            frame.merged = merge_vectors(ex.responses.values(), self.ctx.n, self.v0_for(frame.inst))
            frame.phase = "wb"
            return self._broadcast("BWB", ex.seq, frame.merged, frame.inst)
        return self._pop(frame.merged)

    # -- server side ---------------------------------------------------------

    def on_message(self, msg: Message):
        kind = msg.kind
        if kind == "BW":
            return self.handle_write(msg)
        if kind == "BWB":
            return self.handle_write_back(msg)
        if kind == "BR":
            return self.handle_read(msg)
        if self.ex is not None and exchange_step(self.ex, msg):
            return self._exchange_done()
        return []

    def write_i(self, inst, i: int, tv: TaggedValue) -> bool:
        vec, last = self._state(inst)
        if tv.seq > last[i]:
            last[i] = tv.seq
            vec[i] = tv
            return True
        return False

    def _flush(self, inst) -> list:
        snapshot = tuple(self.vec[inst])
        return [MemoryWrite(inst, mu, snapshot) for mu in self.ctx.writable]

    def handle_write(self, msg: Message):
        out = []
        if self.write_i(msg.inst, msg.src, TaggedValue(msg.seq, msg.payload)):
            out = self._flush(msg.inst)
        out.append(self._ack(msg))
        return out

    def handle_write_back(self, msg: Message):
        changed = False
        for i, tv in enumerate(msg.payload):
            changed |= self.write_i(msg.inst, i, tv)
        out = self._flush(msg.inst) if changed else []
        out.append(self._ack(msg))
        return out

    def handle_read(self, msg: Message):
        v0 = self.v0_for(msg.inst)
        if not self.ctx.readable:
            return [self._ack(msg, tuple([TaggedValue(0, v0)] * self.ctx.n))]
        self.job = {"msg": msg, "left": len(self.ctx.readable), "vectors": []}
        return [MemoryRead(msg.inst, mu, owner) for mu, owner in self.ctx.readable]

    def on_read_result(self, action: MemoryRead, content):
        job = self.job
        if content is not None:
            job["vectors"].append(content)
        job["left"] -= 1
        if job["left"]:
            return []
        self.job = None
        msg = job["msg"]
        return [self._ack(msg, merge_vectors(job["vectors"], self.ctx.n, self.v0_for(msg.inst)))]
