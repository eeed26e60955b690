"""Offline verdicts over simulation histories."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .protocols.base import TaggedValue, precedes
from .protocols.coin import agreement_parameter


class MalformedHistory(ValueError):
    pass


@dataclass
class Violation:
    predicate: str
    ops: tuple
    explanation: str


@dataclass
class Verdict:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, predicate, ops, explanation):
        self.violations.append(Violation(predicate, tuple(ops), explanation))

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"predicate": v.predicate, "ops": [str(o) for o in v.ops], "explanation": v.explanation}
                for v in self.violations
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _register_ops(history):
    writes = sorted((r for r in history.records if r.kind == "write"), key=lambda r: r.start)
    reads = [r for r in history.records if r.kind == "read" and r.complete]
    writers = {w.process for w in writes}
    if len(writers) > 1:
        raise MalformedHistory(f"more than one writer: {sorted(writers)}")
    values = {}
    for k, w in enumerate(writes, start=1):
        if w.arg in values.values() or w.arg == history.v0:
            raise MalformedHistory(f"write {w.op_id} repeats a value or writes v0")
        values[k] = w
    for r in reads:
        if not isinstance(r.result, TaggedValue):
            raise MalformedHistory(f"read {r.op_id} has no (seq, val) result")
    return values, reads


def _value_ok(r, values, v0) -> bool:
    s, v = r.result
    if s == 0:
        return v == v0
    return s in values and values[s].arg == v


def check_atomic_swmr(history) -> Verdict:
    """Single-writer atomicity via sequence numbers.

    Write k carries seq k. Reads must (a) not return a write invoked after they
    responded, (b) return at least the latest write completed before they were
    invoked, (c) never go backwards relative to an earlier read, and (d) return
    the value that goes with the sequence number.
    """
    values, reads = _register_ops(history)
    verdict = Verdict()
    v0 = history.v0
    for r in reads:
        s = r.result.seq
        if not _value_ok(r, values, v0):
            verdict.add("value-matches-seq", [r.op_id], f"read returned {tuple(r.result)} which no write produced")
        if s > 0 and (s not in values or values[s].start > r.end):
            verdict.add("no-future-read", [r.op_id], f"read returned seq {s} from a write not yet invoked")
        for k, w in values.items():
            if w.complete and w.end < r.start and s < k:
                verdict.add("read-after-write", [w.op_id, r.op_id], f"write {k} completed before the read, which returned seq {s}")
    by_end = sorted(reads, key=lambda r: r.end)
    for r1 in by_end:
        for r2 in reads:
            if r1.end < r2.start and r1.result.seq > r2.result.seq:
                verdict.add("no-new-old-inversion", [r1.op_id, r2.op_id],
                            f"seq {r1.result.seq} read before seq {r2.result.seq}")
    return verdict


def check_regular_swmr(history) -> Verdict:
    """Every read returns an overlapping write or the last write completed before it."""
    values, reads = _register_ops(history)
    verdict = Verdict()
    v0 = history.v0
    for r in reads:
        s = r.result.seq
        if not _value_ok(r, values, v0):
            verdict.add("value-matches-seq", [r.op_id], f"read returned {tuple(r.result)} which no write produced")
            continue
        preceding = [k for k, w in values.items() if w.complete and w.end < r.start]
        last = max(preceding, default=0)
        if s == last:
            continue
        w = values.get(s)
        overlaps = w is not None and w.start < r.end and (not w.complete or w.end > r.start)
        if not overlaps:
            verdict.add("regular-read", [r.op_id] + ([values[last].op_id] if last else []),
                        f"read returned seq {s} but the latest preceding write is {last}")
    return verdict


def _vector_seqs(vec):
    return [tv.seq for tv in vec]


def check_collect_regularity(history, inst=None) -> Verdict:
    """Ordering guarantees of batched writes and collects, per instance.

    (a) a collect started after p_i's write completed sees that write or later;
    (b) a collect started after another collect's write-back completed sees
    that whole vector; (c) non-overlapping collects are ordered by precedes.
    """
    verdict = Verdict()
    writes = [r for r in history.records if r.kind == "bwrite" and r.complete]
    collects = [r for r in history.records if r.kind == "collect" and r.complete]
    if inst is not None:
        writes = [w for w in writes if w.detail.get("inst") == inst]
        collects = [c for c in collects if c.detail.get("inst") == inst]
    for c in collects:
        if "vector" not in c.detail:
            raise MalformedHistory(f"collect {c.op_id} has no vector")
    for w in writes:
        for c in collects:
            if c.detail["inst"] != w.detail["inst"] or c.start <= w.end:
                continue
            if c.detail["vector"][w.process].seq < w.detail["seq"]:
                verdict.add("write-precedes-collect", [w.op_id, c.op_id],
                            f"collect missed p{w.process}'s write seq {w.detail['seq']}")
    for c1 in collects:
        for c2 in collects:
            if c1 is c2 or c1.detail["inst"] != c2.detail["inst"] or not c1.end < c2.start:
                continue
            if not precedes(c1.detail["vector"], c2.detail["vector"]):
                verdict.add("collect-precedes-collect", [c1.op_id, c2.op_id],
                            f"{_vector_seqs(c1.detail['vector'])} does not precede {_vector_seqs(c2.detail['vector'])}")
    return verdict


def check_sdc_chain(vectors) -> Verdict:
    """SDC outputs must be totally ordered by precedes."""
    verdict = Verdict()
    vectors = list(vectors)
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            a, b = vectors[i], vectors[j]
            if not (precedes(a, b) or precedes(b, a)):
                verdict.add("sdc-chain", [i, j], f"{_vector_seqs(a)} and {_vector_seqs(b)} are incomparable")
    return verdict


def sdc_vectors(history, inst=None) -> list:
    out = [r.detail["vector"] for r in history.records if r.kind == "sdc" and r.complete]
    if inst is not None:
        out = [r.detail["vector"] for r in history.records
               if r.kind == "sdc" and r.complete and r.detail.get("inst") == inst]
    return out


def check_consensus(inputs, decisions) -> Verdict:
    """``inputs``: all proposed values; ``decisions``: values decided by non-crashed processes."""
    verdict = Verdict()
    decided = list(decisions)
    if len(set(decided)) > 1:
        verdict.add("agreement", range(len(decided)), f"processes decided {sorted(set(decided))}")
    for i, d in enumerate(decided):
        if d not in set(inputs):
            verdict.add("validity", [i], f"decision {d} is nobody's input")
    return verdict


@dataclass
class CoinStats:
    runs: int
    unanimous_minus1: int
    unanimous_plus1: int
    mixed: int
    flips_per_run: list
    c: Fraction
    threshold: float
    bound_ok: bool

    @property
    def mean_flips(self) -> float:
        return sum(self.flips_per_run) / self.runs

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "unanimous_minus1": self.unanimous_minus1,
            "unanimous_plus1": self.unanimous_plus1,
            "mixed": self.mixed,
            "mean_flips": self.mean_flips,
            "max_flips": max(self.flips_per_run),
            "c": str(self.c),
            "agreement_parameter": str(agreement_parameter(self.c)),
            "threshold": self.threshold,
            "bound_ok": self.bound_ok,
        }


def unanimity_threshold(c, runs: int) -> float:
    """Agreement parameter minus three standard errors of a p=1/2 proportion."""
    return float(agreement_parameter(c)) - 3 * math.sqrt(0.25 / runs)


def coin_statistics(results, c) -> CoinStats:
    """``results``: one ``(outputs, flips)`` pair per run, outputs from non-crashed processes."""
    results = list(results)
    if not results:
        raise ValueError("need at least one run")
    minus = plus = mixed = 0
    flips = []
    for outputs, nflips in results:
        vals = set(outputs)
        if vals == {-1}:
            minus += 1
        elif vals == {1}:
            plus += 1
        else:
            mixed += 1
        flips.append(nflips)
    runs = len(results)
    thr = unanimity_threshold(c, runs)
    ok = minus / runs >= thr and plus / runs >= thr
    return CoinStats(runs, minus, plus, mixed, flips, Fraction(c), thr, ok)
