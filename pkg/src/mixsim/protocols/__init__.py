from .base import (
    CountAtLeast,
    ExchangeState,
    FlipCoin,
    MemoryRead,
    MemoryWrite,
    Message,
    NodeContext,
    Note,
    ProtocolMisuse,
    RepresentedAtLeast,
    Respond,
    Send,
    TaggedValue,
    exchange_step,
    max_tagged,
    precedes,
    same_seqs,
    transition,
)
from .batching import BatchNode, merge_vectors
from .coin import CoinNode, agreement_parameter, coin_decision, parse_c
from .consensus import ConsensusNode, round_rule
from .register import RegisterNode, reader_invoke_read, writer_invoke_write

__all__ = [
    "BatchNode",
    "CoinNode",
    "ConsensusNode",
    "CountAtLeast",
    "ExchangeState",
    "FlipCoin",
    "MemoryRead",
    "MemoryWrite",
    "Message",
    "NodeContext",
    "Note",
    "ProtocolMisuse",
    "RegisterNode",
    "RepresentedAtLeast",
    "Respond",
    "Send",
    "TaggedValue",
    "agreement_parameter",
    "coin_decision",
    "exchange_step",
    "max_tagged",
    "merge_vectors",
    "parse_c",
    "precedes",
    "reader_invoke_read",
    "round_rule",
    "same_seqs",
    "transition",
    "writer_invoke_write",
]
