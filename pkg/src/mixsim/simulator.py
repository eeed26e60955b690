"""Deterministic discrete-event execution of protocol automata.

One tick is one step of one process: a message delivery (and the handler it
triggers up to its first shared-memory access), a single shared-memory access,
a coin flip, an operation invocation, or a crash. Links are reliable and FIFO
per ordered pair; the adversary picks which enabled step runs next.
"""
from __future__ import annotations

import hashlib
import json
import random
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

import numpy as np

from .protocols import (
    BatchNode,
    CoinNode,
    ConsensusNode,
    CountAtLeast,
    FlipCoin,
    MemoryRead,
    MemoryWrite,
    Message,
    NodeContext,
    Note,
    RegisterNode,
    RepresentedAtLeast,
    Respond,
    Send,
    TaggedValue,
)
from .topology import MixedTopology, compute_rho_sigma, is_f_partitionable, normalize, read_relation

DEFAULT_BUDGET = 10**6


class SimulationError(RuntimeError):
    pass


class AccessViolation(SimulationError):
    """A process touched a memory cell outside its access rights."""


class NotPartitionable(ValueError):
    pass


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class RandomSeeded:
    """Uniform choice among enabled steps, driven by the run seed."""


@dataclass(frozen=True)
class RoundRobin:
    pass


@dataclass(frozen=True)
class Partition:
    """Random scheduling, but deliveries between the two groups are held back.

    Held messages are released at ``release_tick`` or, when that is None, once
    every workload operation has completed. If nothing but held deliveries is
    enabled the hold is lifted early; links never lose messages.
    """

    group_a: frozenset
    group_b: frozenset
    release_tick: Optional[int] = None


@dataclass(frozen=True)
class Scripted:
    """Explicit step choices, e.g. ``("deliver", src, dst)``, ``("local", p)``, ``("invoke", p)``.

    Once the script runs out scheduling continues round-robin.
    """

    choices: tuple = ()


@dataclass(frozen=True)
class Op:
    process: int
    kind: str
    arg: Any = None
    after: tuple = ()  # workload indices that must complete before invocation


@dataclass
class SimConfig:
    topology: MixedTopology
    f: int
    seed: int = 0
    adversary: Any = field(default_factory=RandomSeeded)
    crash_plan: tuple = ()
    workload: tuple = ()
    step_budget: int = DEFAULT_BUDGET
    protocol: str = "register"
    params: dict = field(default_factory=dict)
    quorum: str = "count"  # "count" | "represented"
    immediate_self: bool = False
    record_trace: bool = True


# --- results ----------------------------------------------------------------

@dataclass
class OpRecord:
    op_id: Any
    process: int
    kind: str
    arg: Any = None
    start: int = 0
    end: Optional[int] = None
    start_tick: int = 0
    end_tick: Optional[int] = None
    result: Any = None
    detail: dict = field(default_factory=dict)
    parent: Any = None

    @property
    def complete(self) -> bool:
        return self.end is not None


@dataclass
class History:
    records: list
    v0: Any = 0
    crashed: frozenset = frozenset()

    def of_kind(self, *kinds) -> list:
        return [r for r in self.records if r.kind in kinds]

    def top_level(self) -> list:
        return [r for r in self.records if r.parent is None]


@dataclass
class OpMetrics:
    messages_sent: int = 0
    acks_sent: int = 0
    round_trips: int = 0
    sm_reads: int = 0
    sm_writes: int = 0


@dataclass
class Metrics:
    per_op: dict = field(default_factory=dict)
    registers_allocated: int = 0
    events: int = 0
    flips: list = field(default_factory=list)
    exchanges: list = field(default_factory=list)  # (process, tag, responders at completion)

    def to_dict(self) -> dict:
        return {
            "registers_allocated": self.registers_allocated,
            "events": self.events,
            "flips": list(self.flips),
            "exchanges": [list(e) for e in self.exchanges],
            "per_op": {
                str(k): {
                    "messages_sent": m.messages_sent,
                    "acks_sent": m.acks_sent,
                    "round_trips": m.round_trips,
                    "sm_reads": m.sm_reads,
                    "sm_writes": m.sm_writes,
                }
                for k, m in sorted(self.per_op.items(), key=lambda kv: str(kv[0]))
            },
        }


@dataclass
class SimResult:
    trace: list
    history: History
    metrics: Metrics
    verdict: str  # "Completed" | "BudgetExhausted"
    crashed: frozenset
    nodes: list

    def export_trace(self) -> str:
        return "".join(
            json.dumps(
                {"tick": t, "process": p, "action": a, "detail": _jsonable(d)},
                sort_keys=True,
                separators=(",", ":"),
            ) + "\n"
            for t, p, a, d in self.trace
        )

    def trace_hash(self) -> str:
        return hashlib.sha256(self.export_trace().encode()).hexdigest()

    def export_metrics(self) -> str:
        return json.dumps(self.metrics.to_dict(), sort_keys=True, indent=2)

    def responses(self) -> dict:
        """Result of every completed top-level operation, by process."""
        out: dict = {}
        for r in self.history.top_level():
            if r.complete:
                out.setdefault(r.process, []).append(r.result)
        return out


def _jsonable(obj):
    if isinstance(obj, Message):
        return {
            "kind": obj.kind, "src": obj.src, "dst": obj.dst, "seq": obj.seq,
            "xid": obj.xid, "payload": _jsonable(obj.payload), "inst": _jsonable(obj.inst),
        }
    if isinstance(obj, TaggedValue):
        return [obj.seq, _jsonable(obj.val)]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_jsonable(x) for x in obj)
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


# --- engine -----------------------------------------------------------------

_IMMEDIATE = (Send, Respond, Note)
_ALIAS = {"write": "bwrite", "propose": "consensus"}


def build_contexts(topology: MixedTopology, f: int, quorum: str = "count") -> list:
    topology = normalize(topology)
    n = topology.n
    if quorum == "count":
        rule = CountAtLeast(n - f)
    elif quorum == "represented":
        if topology.clustering is None:
            raise ValueError("represented quorums need a cluster topology")
        cluster_of = tuple(topology.clustering.cluster_of())
        rule = RepresentedAtLeast(n - f, cluster_of)
    else:
        raise ValueError(f"unknown quorum rule {quorum!r}")
    contexts = []
    for p in range(n):
        readable = tuple(
            (mu, owner)
            for mu in topology.readable(p)
            for owner in sorted(topology.memories[mu].writers)
        )
        contexts.append(NodeContext(p, n, f, readable, topology.writable(p), rule))
    return contexts


def make_node(protocol: str, ctx: NodeContext, params: dict):
    if protocol == "register":
        return RegisterNode(ctx, writer=params.get("writer", 0), v0=params.get("v0", 0))
    if protocol == "batch":
        return BatchNode(ctx, v0=params.get("v0", 0))
    if protocol == "coin":
        return CoinNode(ctx, c=params.get("c", 2))
    if protocol == "consensus":
        return ConsensusNode(ctx, c=params.get("c", 2))
    raise ValueError(f"unknown protocol {protocol!r}")


def flip_streams(seed: int, n: int) -> list:
    """One independent PRNG per process, split from the run seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [random.Random(int(c.generate_state(1, dtype=np.uint64)[0])) for c in children]


class Simulation:
    def __init__(self, config: SimConfig):
        self.cfg = config
        top = normalize(config.topology)
        self.top = top
        n = self.n = top.n
        if not 0 <= config.f < n:
            raise ValueError(f"f={config.f} must lie in 0..{n - 1}")
        if config.step_budget <= 0:
            raise ValueError("step_budget must be positive")
        self.contexts = build_contexts(top, config.f, config.quorum)
        self.nodes = [make_node(config.protocol, ctx, config.params) for ctx in self.contexts]
        self.rho, self.sigma = compute_rho_sigma(top)
        self.can_read = [set(ctx.readable) for ctx in self.contexts]
        self.can_write = [set(ctx.writable) for ctx in self.contexts]

        self.rng = random.Random(config.seed)
        self.flip_rng = flip_streams(config.seed, n)
        self.local = [deque() for _ in range(n)]
        self.chans: dict = {}
        self.inbound = [set() for _ in range(n)]
        self.crashed: set = set()
        self.memory: dict = {}
        self.instances: set = set()
        self.immediate: deque = deque()

        self.ops = list(config.workload)
        for i, op in enumerate(self.ops):
            if not (isinstance(op, Op) and 0 <= op.process < n):
                raise ValueError(f"malformed workload entry {i}: {op!r}")
            if any(not 0 <= j < len(self.ops) for j in op.after):
                raise ValueError(f"workload entry {i} depends on a missing op")
        self.pending = [deque(i for i, op in enumerate(self.ops) if op.process == p) for p in range(n)]
        self.done: set = set()
        self.current: list = [None] * n
        self.records: dict = {}
        self.sub_records: dict = {}
        self.order: list = []
        self.clock = 0

        self.metrics = Metrics(flips=[0] * n)
        self.xids: dict = {}
        self.trace: list = []
        self.tick = 0
        self.crash_plan = sorted(((t, p) for p, t in config.crash_plan), key=lambda x: (x[0], x[1]))
        self.rr_next = 0
        self.script = deque(config.adversary.choices) if isinstance(config.adversary, Scripted) else None
        self.released = False

    # -- bookkeeping ---------------------------------------------------------

    def _log(self, p, action, detail):
        if self.cfg.record_trace:
            self.trace.append((self.tick, p, action, detail))

    def _stamp(self) -> int:
        self.clock += 1
        return self.clock

    def _op_metrics(self, tag) -> OpMetrics:
        m = self.metrics.per_op.get(tag)
        if m is None:
            m = self.metrics.per_op[tag] = OpMetrics()
        return m

    # -- action execution ----------------------------------------------------

    def _enqueue(self, p, actions, server_tag):
        q = self.local[p]
        client_tag = self.current[p]
        for a in actions:
            if isinstance(a, Send):
                tag = server_tag if a.msg.is_ack else client_tag
            elif isinstance(a, (MemoryRead, MemoryWrite)):
                tag = server_tag
            else:
                tag = client_tag
            q.append((a, tag))
        self._drain(p)

    def _drain(self, p):
        q = self.local[p]
        while q and isinstance(q[0][0], _IMMEDIATE):
            a, tag = q.popleft()
            if isinstance(a, Send):
                self._send(p, a.msg, tag)
            elif isinstance(a, Note):
                self._note(p, a)
            else:
                self._respond(p, a.result)

    def _send(self, p, msg: Message, tag):
        if tag is not None:
            m = self._op_metrics(tag)
            if msg.is_ack:
                m.acks_sent += 1
            else:
                m.messages_sent += 1
                key = (p, msg.xid)
                if key not in self.xids:
                    self.xids[key] = tag
                    m.round_trips += 1
        self._log(p, "send", msg)
        dst = msg.dst
        if dst in self.crashed:
            return
        if dst == p and self.cfg.immediate_self:
            self.immediate.append((msg, tag))
            return
        key = (p, dst)
        ch = self.chans.get(key)
        if ch is None:
            ch = self.chans[key] = deque()
        ch.append((msg, tag))
        self.inbound[dst].add(p)

    def _respond(self, p, result):
        i = self.current[p]
        rec = self.records[i]
        rec.end = self._stamp()
        rec.end_tick = self.tick
        rec.result = result
        self.current[p] = None
        self.done.add(i)
        self._log(p, "respond", {"op": i, "result": result})

    def _note(self, p, note: Note):
        key = (p, note.nid)
        top = self.records.get(self.current[p])
        if note.edge == "begin" and top is not None and not top.detail and _ALIAS.get(top.kind, top.kind) == note.kind:
            # the outermost frame of a top-level op: annotate its record instead of duplicating it
            top.detail.update(note.data or {})
            top.kind = note.kind
            self.sub_records[key] = top
        elif note.edge == "begin":
            rec = OpRecord(
                op_id=key, process=p, kind=note.kind, start=self._stamp(), start_tick=self.tick,
                detail=dict(note.data or {}), parent=self.current[p],
            )
            self.sub_records[key] = rec
            self.order.append(rec)
        elif note.edge == "end":
            rec = self.sub_records[key]
            rec.end = self._stamp()
            rec.end_tick = self.tick
            data = note.data or {}
            rec.detail.update(data)
            rec.result = data.get("vector", data.get("value", data.get("seq", data.get("decision"))))
        self._log(p, "note", {"edge": note.edge, "kind": note.kind, "nid": note.nid, "data": note.data})

    def _local_step(self, p):
        a, tag = self.local[p].popleft()
        node = self.nodes[p]
        if isinstance(a, MemoryWrite):
            if a.mem not in self.can_write[p]:
                raise AccessViolation(f"p{p} wrote memory {a.mem} without permission")
            self.memory[(a.inst, a.mem, p)] = a.value
            self.instances.add(a.inst)
            if tag is not None:
                self._op_metrics(tag).sm_writes += 1
            self._log(p, "mem_write", {"inst": a.inst, "mem": a.mem, "value": a.value})
            self._drain(p)
        elif isinstance(a, MemoryRead):
            if (a.mem, a.owner) not in self.can_read[p]:
                raise AccessViolation(f"p{p} read cell ({a.mem}, {a.owner}) without permission")
            content = self.memory.get((a.inst, a.mem, a.owner))
            self.instances.add(a.inst)
            if tag is not None:
                self._op_metrics(tag).sm_reads += 1
            self._log(p, "mem_read", {"inst": a.inst, "mem": a.mem, "owner": a.owner, "value": content})
            self._enqueue(p, node.on_read_result(a, content), tag)
        elif isinstance(a, FlipCoin):
            value = 1 if self.flip_rng[p].random() < 0.5 else -1
            self.metrics.flips[p] += 1
            self._log(p, "flip", value)
            self._enqueue(p, node.on_flip(value), None)
        else:
            raise SimulationError(f"unexpected local action {a!r}")

    def _deliver(self, src, dst):
        ch = self.chans[(src, dst)]
        msg, tag = ch.popleft()
        if not ch:
            self.inbound[dst].discard(src)
        self._log(dst, "deliver", msg)
        self._handle(dst, msg, tag)

    def _handle(self, p, msg, tag):
        node = self.nodes[p]
        ex = node.ex
        was_open = ex is not None and not ex.complete
        actions = node.on_message(msg)
        if was_open and ex.complete:
            self.metrics.exchanges.append((p, ex.tag, len(ex.responses)))
        self._enqueue(p, actions, tag)

    def _invoke(self, p, i):
        self.pending[p].popleft()
        op = self.ops[i]
        self.current[p] = i
        rec = OpRecord(op_id=i, process=p, kind=op.kind, arg=op.arg, start=self._stamp(), start_tick=self.tick)
        self.records[i] = rec
        self.order.append(rec)
        self._log(p, "invoke", {"op": i, "kind": op.kind, "arg": op.arg})
        self._enqueue(p, self.nodes[p].on_invoke(op.kind, op.arg), None)

    def _crash(self, p):
        if p in self.crashed:
            return
        self.crashed.add(p)
        self.local[p].clear()
        self.pending[p].clear()
        for key in list(self.chans):
            if p in key:
                del self.chans[key]
        self.inbound[p].clear()
        for s in self.inbound:
            s.discard(p)
        self._log(p, "crash", None)

    # -- scheduling ----------------------------------------------------------

    def enabled(self) -> list:
        ev = []
        for p in range(self.n):
            if p in self.crashed:
                continue
            if self.local[p]:
                ev.append(("local", p))
                continue
            for src in sorted(self.inbound[p]):
                ev.append(("deliver", src, p))
            if self.current[p] is None and self.pending[p]:
                i = self.pending[p][0]
                if all(j in self.done for j in self.ops[i].after):
                    ev.append(("invoke", p, i))
        return ev

    def _held(self, ev, adv: Partition) -> bool:
        if ev[0] != "deliver":
            return False
        src, dst = ev[1], ev[2]
        a, b = adv.group_a, adv.group_b
        return (src in a and dst in b) or (src in b and dst in a)

    def _choose(self, ev: list):
        adv = self.cfg.adversary
        if isinstance(adv, RandomSeeded):
            return ev[self.rng.randrange(len(ev))]
        if isinstance(adv, Partition):
            if not self.released:
                if adv.release_tick is not None:
                    self.released = self.tick >= adv.release_tick
                else:
                    self.released = len(self.done) == len(self.ops)
            if not self.released:
                free = [e for e in ev if not self._held(e, adv)]
                if free:
                    return free[self.rng.randrange(len(free))]
                self.released = True
            return ev[self.rng.randrange(len(ev))]
        if isinstance(adv, Scripted) and self.script:
            want = tuple(self.script.popleft())
            for e in ev:
                if e[: len(want)] == want:
                    return e
            raise SimulationError(f"scripted step {want} is not enabled at tick {self.tick}")
        if isinstance(adv, (RoundRobin, Scripted)):
            for k in range(self.n):
                p = (self.rr_next + k) % self.n
                mine = [e for e in ev if (e[2] if e[0] == "deliver" else e[1]) == p]
                if mine:
                    self.rr_next = p + 1
                    return mine[0]
        raise SimulationError(f"unsupported adversary {adv!r}")

    def step(self, ev):
        kind = ev[0]
        if kind == "local":
            self._local_step(ev[1])
        elif kind == "deliver":
            self._deliver(ev[1], ev[2])
        elif kind == "invoke":
            self._invoke(ev[1], ev[2])
        else:
            raise SimulationError(f"unknown event {ev!r}")
        self.tick += 1
        while self.immediate:
            msg, tag = self.immediate.popleft()
            p = msg.dst
            if p in self.crashed:
                continue
            self._log(p, "deliver", msg)
            self._handle(p, msg, tag)
            self.tick += 1

    def run(self) -> SimResult:
        budget = self.cfg.step_budget
        crashes = deque(self.crash_plan)
        verdict = "Completed"
        while True:
            if crashes and crashes[0][0] <= self.tick:
                _, p = crashes.popleft()
                self._crash(p)
                self.tick += 1
                continue
            ev = self.enabled()
            if not ev:
                break
            if self.tick >= budget:
                verdict = "BudgetExhausted"
                break
            self.step(self._choose(ev))
        return self._result(verdict)

    def _result(self, verdict) -> SimResult:
        n_inst = max(1, len(self.instances))
        self.metrics.registers_allocated = self.rho * n_inst
        self.metrics.events = self.tick
        history = History(self.order, self.cfg.params.get("v0", 0), frozenset(self.crashed))
        return SimResult(self.trace, history, self.metrics, verdict, frozenset(self.crashed), self.nodes)


def run(config: SimConfig) -> SimResult:
    return Simulation(config).run()


def _run_summary(config: SimConfig):
    res = run(config)
    res.nodes = []
    return res


def run_many(configs, workers: int = 1) -> list:
    """Run independent configurations, optionally across worker processes."""
    configs = list(configs)
    if workers <= 1:
        return [run(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_summary, configs))


# --- workloads and scenarios -----------------------------------------------

def register_workload(n: int, writer: int = 0, writes: int = 3, reads: int = 2,
                      readers: Optional[list] = None) -> tuple:
    """Writer performs ``writes`` writes of values 1..k; each reader ``reads`` reads."""
    ops = [Op(writer, "write", v) for v in range(1, writes + 1)]
    for p in (range(n) if readers is None else readers):
        ops.extend(Op(p, "read") for _ in range(reads))
    return tuple(ops)


def sequential_workload(ops) -> tuple:
    """Chain operations so that each waits for the previous one to complete."""
    out = []
    for i, op in enumerate(ops):
        out.append(Op(op.process, op.kind, op.arg, (i - 1,) if i else ()))
    return tuple(out)


def partition_scenario(topology: MixedTopology, f: int, value: Any = 1, v0: Any = 0,
                       seed: int = 0) -> SimConfig:
    """Write in one side of a partition, then read on the side that cannot see it.

    Processes outside the two witness sets crash at the start and cross-group
    messages are held until both operations have finished.
    """
    top = normalize(topology)
    witness = is_f_partitionable(read_relation(top), f)
    if witness is None or not witness.P:
        raise NotPartitionable(f"topology is not {f}-partitionable")
    # witness.P cannot read what witness.Q writes: write in Q, read in P
    writer_group, reader_group = witness.Q, witness.P
    writer, reader = min(writer_group), min(reader_group)
    outside = sorted(set(range(top.n)) - writer_group - reader_group)
    return SimConfig(
        topology=top,
        f=f,
        seed=seed,
        adversary=Partition(writer_group, reader_group),
        crash_plan=tuple((p, 0) for p in outside),
        workload=(Op(writer, "write", value), Op(reader, "read", after=(0,))),
        protocol="register",
        params={"writer": writer, "v0": v0},
    )


def measure_complexities(history: History, metrics: Metrics, topology: MixedTopology) -> dict:
    """Per-operation message, round-trip and shared-memory counts against their bounds."""
    top = normalize(topology)
    n = top.n
    rho, sigma = compute_rho_sigma(top)
    rows = []
    ok = metrics.registers_allocated == rho
    for rec in history.top_level():
        if not rec.complete:
            continue
        m = metrics.per_op.get(rec.op_id, OpMetrics())
        if rec.kind == "write":
            want_msgs, want_rt = n, 1
        elif rec.kind == "read":
            want_msgs, want_rt = 2 * n, 2
        else:
            continue
        row_ok = (
            m.messages_sent == want_msgs
            and m.round_trips == want_rt
            and m.acks_sent <= want_msgs
            and m.sm_reads <= sigma
            and m.sm_writes <= rho
        )
        ok &= row_ok
        rows.append({
            "op": rec.op_id, "kind": rec.kind, "messages_sent": m.messages_sent,
            "expected_messages": want_msgs, "round_trips": m.round_trips,
            "expected_round_trips": want_rt, "acks_sent": m.acks_sent,
            "sm_reads": m.sm_reads, "sm_writes": m.sm_writes, "ok": row_ok,
        })
    return {
        "ok": ok, "n": n, "rho": rho, "sigma": sigma,
        "registers_allocated": metrics.registers_allocated, "ops": rows,
    }
