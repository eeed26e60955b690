"""Binary randomized consensus driven by the weak shared coin.

Round structure (leaders / laggards): every process publishes ``(round, pref)``
in the ``"cons"`` batch instance and collects everybody's pair. A leader (no
one is ahead) whose opponents all trail by at least two rounds decides. A
process that sees all leaders agree adopts their preference; otherwise it takes
the shared coin of its current round. Either way it advances one round.
"""
from __future__ import annotations

from dataclasses import dataclass

from .base import NodeContext, Note, ProtocolMisuse
from .batching import CollectFrame, WriteFrame
from .coin import DEFAULT_C, CoinFrame, CoinNode

CONS_INST = "cons"


@dataclass
class ConsensusFrame:
    pref: int
    round: int = 1
    phase: str = "write"  # write -> collect -> (coin ->) write ...
    nid: int = 0


def round_rule(own_round: int, own_pref: int, observed) -> tuple:
    """Next step given the observed ``(round, pref)`` pairs (own pair included).

    Unpublished processes appear as ``(0, None)``.
    Returns ``("decide", pref)``, ``("adopt", pref)`` or ``("coin", None)``.
    """
    observed = list(observed)
    max_round = max(r for r, _ in observed)
    if own_round >= max_round and all(r <= own_round - 2 for r, v in observed if v != own_pref):
        return "decide", own_pref
    leaders = {v for r, v in observed if r == max_round}
    if len(leaders) == 1:
        return "adopt", leaders.pop()
    return "coin", None


class ConsensusNode(CoinNode):
    def __init__(self, ctx: NodeContext, c=DEFAULT_C):
        super().__init__(ctx, c)
        self.decided = None

    def v0_for(self, inst):
        return None if inst == CONS_INST else 0

    def _top_frame(self, kind, arg):
        if kind == "propose":
            if self.decided is not None:
                raise ProtocolMisuse("propose invoked twice")
            if arg not in (0, 1):
                raise ProtocolMisuse(f"consensus input must be 0 or 1, got {arg!r}")
            return ConsensusFrame(arg)
        return super()._top_frame(kind, arg)

    def _kind(self, frame):
        if isinstance(frame, ConsensusFrame):
            return "consensus"
        return super()._kind(frame)

    def _end_data(self, frame, result):
        if isinstance(frame, ConsensusFrame):
            return {"decision": result, "round": frame.round}
        return super()._end_data(frame, result)

    def _enter(self, frame):
        if isinstance(frame, ConsensusFrame):
            return [Note("begin", "consensus", frame.nid, {"input": frame.pref})] + self._publish(frame)
        return super()._enter(frame)

    def _publish(self, frame):
        frame.phase = "write"
        return self._push(WriteFrame(CONS_INST, (frame.round, frame.pref)))

    def _resume(self, frame, result):
        if not isinstance(frame, ConsensusFrame):
            return super()._resume(frame, result)
        if frame.phase == "write":
            frame.phase = "collect"
            return self._push(CollectFrame(CONS_INST))
        if frame.phase == "coin":
            frame.pref = 1 if result == 1 else 0
            frame.round += 1
            return self._publish(frame)
        pid = self.ctx.pid
        # processes that have not published yet count as round 0 with no preference
        observed = [(0, None) if tv.val is None else tv.val for i, tv in enumerate(result) if i != pid]
        observed.append((frame.round, frame.pref))
        step, value = round_rule(frame.round, frame.pref, observed)
        if step == "decide":
            self.decided = value
            return self._pop(value)
        if step == "adopt":
            frame.pref = value
            frame.round += 1
            return self._publish(frame)
        frame.phase = "coin"
        return self._push(CoinFrame(("coin", frame.round)))
