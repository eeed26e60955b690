"""Weak shared coin: a random walk over per-process cumulative flip counters."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .base import FlipCoin, NodeContext, Note, ProtocolMisuse
from .batching import BatchNode, SdcFrame, WriteFrame

DEFAULT_C = Fraction(2)


def parse_c(value) -> Fraction:
    """Accepts ``"p/q"``, decimals or numbers; the threshold factor must exceed 1."""
    c = Fraction(str(value)) if not isinstance(value, Fraction) else value
    if c <= 1:
        raise ValueError(f"c must be > 1, got {value}")
    return c


def agreement_parameter(c) -> Fraction:
    c = parse_c(c)
    return (c - 1) / (2 * c)


def coin_decision(total, c, n: int) -> int:
    """+1 / -1 once the summed counters cross +-c*n, else 0 (keep flipping)."""
    if total >= c * n:
        return 1
    if total <= -c * n:
        return -1
    return 0


@dataclass
class CoinFrame:
    inst: Any
    counter: int = 0
    flips: int = 0
    phase: str = "flip"  # flip -> write -> sdc -> flip ...
    nid: int = 0


class CoinNode(BatchNode):
    """Adds the ``coin`` operation; the counter stream lives in its own batch instance."""

    def __init__(self, ctx: NodeContext, c=DEFAULT_C):
        super().__init__(ctx, v0=0)
        self.c = parse_c(c)

    def _top_frame(self, kind, arg):
        if kind == "coin":
            return CoinFrame("coin" if arg is None else arg)
        return super()._top_frame(kind, arg)

    def _kind(self, frame):
        if isinstance(frame, CoinFrame):
            return "coin"
        return super()._kind(frame)

    def _end_data(self, frame, result):
        if isinstance(frame, CoinFrame):
            return {"inst": frame.inst, "value": result, "flips": frame.flips}
        return super()._end_data(frame, result)

    def _enter(self, frame):
        if isinstance(frame, CoinFrame):
            return [Note("begin", "coin", frame.nid, {"inst": frame.inst}), FlipCoin()]
        return super()._enter(frame)

    def on_flip(self, value: int):
        frame = self.stack[-1] if self.stack else None
        if not isinstance(frame, CoinFrame) or frame.phase != "flip":
            raise ProtocolMisuse("flip result delivered outside a coin flip step")
        frame.counter += value
        frame.flips += 1
        frame.phase = "write"
        out = [Note("point", "flip", frame.nid, {"inst": frame.inst, "value": value})]
        return out + self._push(WriteFrame(frame.inst, frame.counter))

    def _resume(self, frame, result):
        if not isinstance(frame, CoinFrame):
            return super()._resume(frame, result)
        if frame.phase == "write":
            frame.phase = "sdc"
            return self._push(SdcFrame(frame.inst))
        total = sum(tv.val for tv in result)
        decision = coin_decision(total, self.c, self.ctx.n)
        if decision:
            return self._pop(decision)
        frame.phase = "flip"
        return [FlipCoin()]
