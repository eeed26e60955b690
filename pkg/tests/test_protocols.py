import copy
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixsim.protocols import (
    BatchNode,
    CoinNode,
    ConsensusNode,
    CountAtLeast,
    ExchangeState,
    FlipCoin,
    MemoryRead,
    MemoryWrite,
    Message,
    NodeContext,
    Note,
    ProtocolMisuse,
    RegisterNode,
    RepresentedAtLeast,
    Respond,
    Send,
    TaggedValue,
    agreement_parameter,
    coin_decision,
    exchange_step,
    max_tagged,
    merge_vectors,
    parse_c,
    precedes,
    reader_invoke_read,
    round_rule,
    same_seqs,
    transition,
    writer_invoke_write,
)


def ctx(pid=0, n=5, f=2, writable=(0,), readable=None, rule=None):
    readable = tuple((0, q) for q in range(n)) if readable is None else readable
    return NodeContext(pid, n, f, readable, writable, rule or CountAtLeast(n - f))


def sends(actions):
    return [a.msg for a in actions if isinstance(a, Send)]


def ack(kind, src, dst, seq, xid, payload=None, inst=None):
    return Message("Ack" + kind, src, dst, seq, xid, payload, inst)


# --- register -------------------------------------------------------------------

def test_writer_invoke_write_is_pure():
    node = RegisterNode(ctx())
    new, actions = writer_invoke_write(node, 7)
    assert node.w_sqno == 0 and new.w_sqno == 1
    msgs = sends(actions)
    assert [(m.kind, m.seq, m.payload) for m in msgs] == [("W", 1, 7)] * 5
    assert sorted(m.dst for m in msgs) == list(range(5))


def test_second_write_uses_next_seq_and_busy_writer_is_rejected():
    node = RegisterNode(ctx())
    node.on_invoke("write", 7)
    with pytest.raises(ProtocolMisuse):
        node.on_invoke("write", 8)
    for q in range(3):
        node.on_message(ack("W", q, 0, 1, 1))
    assert not node.busy
    assert {m.seq for m in sends(node.on_invoke("write", 9))} == {2}


def test_only_the_writer_writes():
    with pytest.raises(ProtocolMisuse):
        RegisterNode(ctx(pid=1)).on_invoke("write", 1)


def test_handle_write_message():
    node = RegisterNode(ctx(writable=(0, 3)))
    out = node.handle_write_message(Message("W", 0, 0, 1, 1, 7))
    assert [a for a in out if isinstance(a, MemoryWrite)] == [
        MemoryWrite(None, 0, TaggedValue(1, 7)), MemoryWrite(None, 3, TaggedValue(1, 7))]
    assert sends(out) == [ack("W", 0, 0, 1, 1)]
    node.last_sqno = 3
    out = node.handle_write_message(Message("W", 0, 0, 1, 2, 7))
    assert out == [Send(ack("W", 0, 0, 1, 2))]  # stale: no memory write, ack still sent
    out = node.on_message(Message("WB", 2, 0, 4, 1, 9))
    assert MemoryWrite(None, 0, TaggedValue(4, 9)) in out
    assert sends(out)[0].kind == "AckWB"


def test_handle_read_message_replies_max():
    node = RegisterNode(ctx(readable=((0, 0), (1, 0))))
    req = Message("R", 3, 0, 5, 1)
    reads = node.handle_read_message(req)
    assert reads == [MemoryRead(None, 0, 0), MemoryRead(None, 1, 0)]
    assert node.on_read_result(reads[0], TaggedValue(1, 7)) == []
    out = node.on_read_result(reads[1], TaggedValue(3, 9))
    assert out == [Send(ack("R", 0, 3, 5, 1, TaggedValue(3, 9)))]


def test_handle_read_message_initial_and_empty():
    node = RegisterNode(ctx(readable=((0, 0),)), v0="init")
    (read,) = node.handle_read_message(Message("R", 1, 0, 1, 1))
    assert sends(node.on_read_result(read, None))[0].payload == TaggedValue(0, "init")
    lonely = RegisterNode(ctx(readable=()), v0="init")
    assert sends(lonely.handle_read_message(Message("R", 1, 0, 1, 1)))[0].payload == TaggedValue(0, "init")


def test_read_runs_r_then_write_back():
    node = RegisterNode(ctx(pid=2), writer=0)
    node, actions = reader_invoke_read(node)
    assert {m.kind for m in sends(actions)} == {"R"}
    node.on_message(ack("R", 0, 2, 1, 1, TaggedValue(1, 7)))
    node.on_message(ack("R", 1, 2, 1, 1, TaggedValue(3, 9)))
    out = node.on_message(ack("R", 3, 2, 1, 1, TaggedValue(0, 0)))
    wb = sends(out)
    assert {(m.kind, m.seq, m.payload) for m in wb} == {("WB", 3, 9)}
    xid = wb[0].xid
    node.on_message(ack("WB", 0, 2, 3, xid))
    node.on_message(ack("WB", 0, 2, 3, xid))  # duplicate
    assert node.on_message(ack("WB", 1, 2, 3, xid)) == []
    assert node.on_message(ack("WB", 4, 2, 3, xid)) == [Respond(TaggedValue(3, 9))]


# --- exchanges ------------------------------------------------------------------

def test_exchange_step_count_rule():
    ex = ExchangeState("W", 1, 1, CountAtLeast(3))
    assert not exchange_step(ex, ack("W", 0, 0, 1, 1))
    assert not exchange_step(ex, ack("W", 0, 0, 1, 1))
    assert not exchange_step(ex, ack("W", 1, 0, 1, 2))  # other exchange
    assert not exchange_step(ex, ack("R", 1, 0, 1, 1))
    assert not exchange_step(ex, ack("W", 1, 0, 1, 1))
    assert exchange_step(ex, ack("W", 2, 0, 1, 1))
    assert not exchange_step(ex, ack("W", 3, 0, 1, 1))


def test_exchange_step_represented_rule():
    a, b = frozenset({0, 1, 2}), frozenset({3, 4})
    rule = RepresentedAtLeast(3, (a, a, a, b, b))
    ex = ExchangeState("W", 1, 1, rule)
    assert exchange_step(ex, ack("W", 0, 0, 1, 1))
    assert ex.represented == a
    ex = ExchangeState("W", 1, 1, rule)
    assert not exchange_step(ex, ack("W", 3, 0, 1, 1))
    assert exchange_step(ex, ack("W", 4, 0, 1, 1)) is False
    assert exchange_step(ex, ack("W", 1, 0, 1, 1))


# --- vectors and batching -------------------------------------------------------

def test_vector_helpers():
    t = TaggedValue
    assert max_tagged([t(1, "a"), t(3, "b"), t(2, "c")]) == t(3, "b")
    v1, v2 = (t(1, 0), t(0, 0)), (t(1, 0), t(2, 5))
    assert precedes(v1, v2) and not precedes(v2, v1)
    assert same_seqs(v1, (t(1, 9), t(0, 8)))
    assert merge_vectors([v1, (t(0, 0), t(2, 5))], 2) == v2
    assert merge_vectors([], 3, v0="x") == (t(0, "x"),) * 3


def test_batch_write_dedups_per_slot():
    node = BatchNode(ctx(pid=1, writable=(0, 1)))
    out = node.on_message(Message("BW", 3, 1, 2, 1, "v", "main"))
    assert [a.mem for a in out if isinstance(a, MemoryWrite)] == [0, 1]
    vec = next(a.value for a in out if isinstance(a, MemoryWrite))
    assert vec[3] == TaggedValue(2, "v") and vec[0] == TaggedValue(0, 0)
    out = node.on_message(Message("BW", 3, 1, 1, 2, "old", "main"))
    assert not [a for a in out if isinstance(a, MemoryWrite)]
    assert sends(out)[0].kind == "AckBW"


def test_collect_of_quiescent_system_is_initial():
    n = 3
    node = BatchNode(ctx(pid=0, n=n, f=1), v0="z")
    msgs = sends(node.on_invoke("collect"))
    xid = msgs[0].xid
    initial = (TaggedValue(0, "z"),) * n
    node.on_message(ack("BR", 1, 0, 1, xid, initial, "main"))
    out = node.on_message(ack("BR", 2, 0, 1, xid, initial, "main"))
    wb = sends(out)
    assert {m.kind for m in wb} == {"BWB"}
    assert wb[0].payload == initial
    for q in (0, 1):
        out = node.on_message(ack("BWB", q, 0, 1, wb[0].xid, None, "main"))
    assert out[-1] == Respond(initial)
    assert any(isinstance(a, Note) and a.edge == "end" and a.kind == "collect" for a in out)


# --- coin and consensus ---------------------------------------------------------

def test_parse_c_and_threshold():
    assert parse_c("3/2") == Fraction(3, 2)
    assert parse_c("2.5") == Fraction(5, 2)
    with pytest.raises(ValueError):
        parse_c("1")
    assert agreement_parameter(2) == Fraction(1, 4)
    assert coin_decision(8, Fraction(2), 4) == 1
    assert coin_decision(-8, Fraction(2), 4) == -1
    assert coin_decision(3, Fraction(2), 4) == 0


def test_coin_starts_with_a_flip():
    node = CoinNode(ctx(n=4, f=1))
    out = node.on_invoke("coin")
    assert out[-1] == FlipCoin()
    out = node.on_flip(1)
    assert {m.kind for m in sends(out)} == {"BW"}
    assert sends(out)[0].payload == 1


@pytest.mark.parametrize("own_round, own_pref, observed, expected", [
    (2, 1, [(2, 1), (2, 1), (0, None)], ("decide", 1)),
    (1, 1, [(1, 1), (0, None)], ("adopt", 1)),  # an unpublished process may still catch up
    (3, 0, [(3, 0), (2, 1)], ("adopt", 0)),
    (2, 0, [(2, 0), (3, 1)], ("adopt", 1)),
    (2, 0, [(2, 0), (2, 1)], ("coin", None)),
])
def test_round_rule(own_round, own_pref, observed, expected):
    assert round_rule(own_round, own_pref, observed) == expected


def test_consensus_rejects_bad_input():
    with pytest.raises(ProtocolMisuse):
        ConsensusNode(ctx(n=4, f=1)).on_invoke("propose", 2)


# --- purity ---------------------------------------------------------------------

message_st = st.builds(
    Message,
    kind=st.sampled_from(["W", "WB", "R", "AckW", "AckR", "AckWB"]),
    src=st.integers(0, 4),
    dst=st.just(0),
    seq=st.integers(0, 4),
    xid=st.integers(0, 3),
    payload=st.one_of(st.none(), st.integers(0, 9), st.builds(TaggedValue, st.integers(0, 4), st.integers(0, 9))),
    inst=st.none(),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(message_st, max_size=12), st.booleans())
def test_transition_is_deterministic_and_pure(msgs, start_read):
    state = RegisterNode(ctx(), writer=0)
    if start_read:
        state, _ = reader_invoke_read(state)
    for msg in msgs:
        if msg.kind in ("R",) and state.job is not None:
            continue
        if msg.kind.startswith("Ack") and not isinstance(msg.payload, (TaggedValue, type(None))):
            continue
        before = copy.deepcopy(state)
        s1, a1 = transition(state, ("deliver", msg))
        s2, a2 = transition(state, ("deliver", msg))
        assert state == before
        assert s1 == s2 and a1 == a2
        state = s1
