"""Command-line front end.

Every command builds a JSON-able report first; the human output is a rendering
of that report. Exit codes: 0 ok, 1 violation found, 2 input error.
"""
from __future__ import annotations

import argparse
import json
import os
import random
import sys
from collections import Counter
from fractions import Fraction

from . import __version__
from .checkers import check_atomic_swmr, check_consensus, check_regular_swmr, coin_statistics
from .protocols.coin import agreement_parameter, parse_c
from .simulator import (
    NotPartitionable,
    Op,
    Partition,
    RandomSeeded,
    RoundRobin,
    SimConfig,
    measure_complexities,
    partition_scenario,
    register_workload,
    run,
)
from .topology import (
    TopologyError,
    analyze,
    compute_f_opt,
    from_pure_mp,
    load_topology,
    normalize,
    read_relation,
)

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2
CRASH_WINDOW = 200


class InputError(Exception):
    pass


# --- helpers ----------------------------------------------------------------

def _topology(args, required=True):
    if args.topology is None:
        if required:
            raise InputError("--topology is required")
        return None
    try:
        return normalize(load_topology(args.topology))
    except TopologyError as e:
        raise InputError(f"{args.topology}: {e}") from e
    except OSError as e:
        raise InputError(f"cannot read {args.topology}: {e.strerror}") from e


def _seed(args) -> int:
    if args.seed is None:
        if os.environ.get("CI"):
            raise InputError("--seed is required when CI is set")
        return 0
    return args.seed


def _positive(name, value):
    if value < 1:
        raise InputError(f"{name} must be >= 1, got {value}")
    return value


def _pick_f(args, top, allow_unsafe=False) -> tuple:
    f_opt = compute_f_opt(read_relation(top))
    f = f_opt if args.f is None else args.f
    if not 0 <= f < top.n:
        raise InputError(f"--f must lie in 0..{top.n - 1}")
    if f > f_opt and not allow_unsafe:
        raise InputError(f"f={f} exceeds f_opt={f_opt}; pass --allow-unsafe to run anyway")
    return f, f_opt


def _adversary(name, n):
    if name == "random":
        return RandomSeeded()
    if name == "round-robin":
        return RoundRobin()
    half = n // 2
    return Partition(frozenset(range(half)), frozenset(range(half, n)))


def _crash_plan(rng, n, count, protect=()) -> tuple:
    pool = [p for p in range(n) if p not in protect]
    victims = rng.sample(pool, min(count, len(pool)))
    return tuple((p, rng.randrange(CRASH_WINDOW)) for p in sorted(victims))


def _crash_count(args, f) -> int:
    count = f if args.crashes is None else args.crashes
    if not 0 <= count <= f:
        raise InputError(f"--crashes must lie in 0..{f}")
    return count


def _survivor_results(res, kind):
    return [r.result for r in res.history.top_level()
            if r.kind == kind and r.complete and r.process not in res.crashed]


# --- commands ---------------------------------------------------------------

def cmd_analyze(args) -> tuple:
    top = _topology(args)
    report = analyze(top).to_dict()
    report["command"] = "analyze"
    report["ok"] = True
    return report, EXIT_OK


def cmd_sim_register(args) -> tuple:
    top = _topology(args)
    f, f_opt = _pick_f(args, top, args.allow_unsafe)
    seed, runs = _seed(args), _positive("--runs", args.runs)
    ops = _positive("--ops", args.ops)
    crashes = _crash_count(args, f)
    rng = random.Random(seed)
    rows, ok = [], True
    for k in range(runs):
        plan = _crash_plan(rng, top.n, crashes, protect=(0,))
        cfg = SimConfig(top, f, seed + k, _adversary(args.adversary, top.n), plan,
                        register_workload(top.n, writes=ops, reads=ops), record_trace=False)
        res = run(cfg)
        verdict = check_atomic_swmr(res.history)
        stuck = [r.op_id for r in res.history.top_level() if not r.complete and r.process not in res.crashed]
        cx = measure_complexities(res.history, res.metrics, top)
        run_ok = verdict.ok and not stuck and res.verdict == "Completed" and cx["ok"]
        ok &= run_ok
        rows.append({
            "seed": seed + k, "crash_plan": [list(c) for c in plan], "verdict": res.verdict,
            "atomic": verdict.to_dict(), "incomplete_ops": stuck, "complexity_ok": cx["ok"],
            "events": res.metrics.events, "ok": run_ok,
        })
    report = {
        "command": "sim-register", "n": top.n, "f": f, "f_opt": f_opt, "runs": runs,
        "adversary": args.adversary, "ok": ok, "results": rows,
    }
    return report, EXIT_OK if ok else EXIT_VIOLATION


def cmd_partition_demo(args) -> tuple:
    top = _topology(args)
    if args.f is None:
        raise InputError("--f is required")
    f_opt = compute_f_opt(read_relation(top))
    seed = _seed(args)
    try:
        cfg = partition_scenario(top, args.f, seed=seed)
    except NotPartitionable as e:
        raise InputError(f"{e} (f_opt={f_opt})") from e
    res = run(cfg)
    verdict = check_regular_swmr(res.history)
    reads = [r for r in res.history.top_level() if r.kind == "read" and r.complete]
    offending = reads[0] if reads else None
    report = {
        "command": "partition-demo", "n": top.n, "f": args.f, "f_opt": f_opt, "seed": seed,
        "writer_group": sorted(cfg.adversary.group_a), "reader_group": sorted(cfg.adversary.group_b),
        "crashed": sorted(res.crashed),
        "read": None if offending is None else {"process": offending.process, "result": list(offending.result)},
        "violation_exhibited": not verdict.ok, "regularity": verdict.to_dict(),
    }
    report["ok"] = report["violation_exhibited"]
    return report, EXIT_OK if report["ok"] else EXIT_VIOLATION


def _n_and_top(args):
    top = _topology(args, required=False)
    if top is None:
        n = args.n
        if n < 2:
            raise InputError("--n must be >= 2")
        top = from_pure_mp(n)
    return top


def _c(args) -> Fraction:
    try:
        return parse_c(args.c)
    except (ValueError, ZeroDivisionError) as e:
        raise InputError(f"--c: {e}") from e


def cmd_coin(args) -> tuple:
    top = _n_and_top(args)
    c = _c(args)
    f, _ = _pick_f(args, top, args.allow_unsafe)
    seed, runs = _seed(args), _positive("--runs", args.runs)
    results, stuck = [], 0
    for k in range(runs):
        cfg = SimConfig(top, f, seed + k, _adversary(args.adversary, top.n),
                        workload=tuple(Op(p, "coin") for p in range(top.n)),
                        protocol="coin", params={"c": c}, record_trace=False)
        res = run(cfg)
        if res.verdict != "Completed":
            stuck += 1
            continue
        results.append((_survivor_results(res, "coin"), sum(res.metrics.flips)))
    stats = coin_statistics(results, c).to_dict() if results else None
    ok = stuck == 0 and stats is not None and stats["bound_ok"]
    report = {
        "command": "coin", "n": top.n, "f": f, "c": str(c), "seed": seed, "runs": runs,
        "agreement_parameter": str(agreement_parameter(c)), "unterminated": stuck,
        "stats": stats, "ok": ok,
    }
    return report, EXIT_OK if ok else EXIT_VIOLATION


def cmd_consensus(args) -> tuple:
    top = _n_and_top(args)
    c = _c(args)
    f, _ = _pick_f(args, top, args.allow_unsafe)
    seed, runs = _seed(args), _positive("--runs", args.runs)
    crashes = _crash_count(args, f)
    rng = random.Random(seed)
    rows, ok = [], True
    for k in range(runs):
        inputs = [rng.randrange(2) for _ in range(top.n)]
        plan = _crash_plan(rng, top.n, crashes)
        cfg = SimConfig(top, f, seed + k, _adversary(args.adversary, top.n), plan,
                        tuple(Op(p, "propose", v) for p, v in enumerate(inputs)),
                        protocol="consensus", params={"c": c}, record_trace=False)
        res = run(cfg)
        decisions = _survivor_results(res, "consensus")
        verdict = check_consensus(inputs, decisions)
        live = top.n - len(res.crashed)
        run_ok = verdict.ok and res.verdict == "Completed" and len(decisions) == live
        ok &= run_ok
        rows.append({
            "seed": seed + k, "inputs": inputs, "crash_plan": [list(p) for p in plan],
            "decisions": decisions, "verdict": res.verdict, "checks": verdict.to_dict(),
            "flips": sum(res.metrics.flips), "ok": run_ok,
        })
    report = {
        "command": "consensus", "n": top.n, "f": f, "c": str(c), "runs": runs,
        "ok": ok, "results": rows,
    }
    return report, EXIT_OK if ok else EXIT_VIOLATION


def cmd_cluster_compare(args) -> tuple:
    top = _topology(args)
    if top.model != "cluster":
        raise InputError(f"cluster-compare needs a cluster topology, got {top.model}")
    f, f_opt = _pick_f(args, top, args.allow_unsafe)
    seed, ops = _seed(args), _positive("--ops", args.ops)
    report = {"command": "cluster-compare", "n": top.n, "f": f, "f_opt": f_opt, "seed": seed}
    ok = True
    for rule in ("count", "represented"):
        cfg = SimConfig(top, f, seed, _adversary(args.adversary, top.n),
                        workload=register_workload(top.n, writes=ops, reads=ops), quorum=rule)
        res = run(cfg)
        verdict = check_atomic_swmr(res.history)
        acks = [k for _, _, k in res.metrics.exchanges]
        ok &= verdict.ok and res.verdict == "Completed"
        report[rule] = {
            "exchanges": len(acks),
            "acks_awaited": {str(k): v for k, v in sorted(Counter(acks).items())},
            "min_acks": min(acks, default=None),
            "max_acks": max(acks, default=None),
            "atomic": verdict.to_dict(),
        }
    report["ok"] = ok
    return report, EXIT_OK if ok else EXIT_VIOLATION


COMMANDS = {
    "analyze": cmd_analyze,
    "sim-register": cmd_sim_register,
    "partition-demo": cmd_partition_demo,
    "coin": cmd_coin,
    "consensus": cmd_consensus,
    "cluster-compare": cmd_cluster_compare,
}


# --- output -----------------------------------------------------------------

def render(report: dict, indent: int = 0) -> str:
    """Plain-text rendering of a report; lists of records are summarized one per line."""
    pad = "  " * indent
    lines = []
    for key, value in report.items():
        if isinstance(value, dict) and value:
            lines.append(f"{pad}{key}:")
            lines.append(render(value, indent + 1))
        elif isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            lines.append(f"{pad}{key}: ({len(value)})")
            for v in value:
                lines.append(f"{pad}  - " + ", ".join(f"{k}={json.dumps(x)}" for k, x in v.items()
                                                     if not isinstance(x, dict)))
        else:
            lines.append(f"{pad}{key}: {json.dumps(value)}")
    return "\n".join(line for line in lines if line)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, topology_required=True):
        p.add_argument("--topology", required=False, metavar="PATH",
                       help="topology JSON file" + ("" if topology_required else " (default: pure message passing)"))
        p.add_argument("--seed", type=int)
        p.add_argument("--json", metavar="PATH", help="also write the report here")

    def sim_opts(p):
        p.add_argument("--f", type=int)
        p.add_argument("--adversary", choices=("random", "round-robin", "partition"), default="random")
        p.add_argument("--allow-unsafe", action="store_true")

    p = sub.add_parser("analyze", help="resilience parameters of a topology")
    common(p)

    p = sub.add_parser("sim-register", help="run the register emulation and check atomicity")
    common(p)
    sim_opts(p)
    p.add_argument("--ops", type=int, default=3, help="writes, and reads per process")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--crashes", type=int, help="crashes per run (default f)")

    p = sub.add_parser("partition-demo", help="exhibit a stale read when f > f_opt")
    common(p)
    p.add_argument("--f", type=int)

    for name, help_ in (("coin", "weak shared coin statistics"), ("consensus", "randomized consensus runs")):
        p = sub.add_parser(name, help=help_)
        common(p, topology_required=False)
        sim_opts(p)
        p.add_argument("--n", type=int, default=4)
        p.add_argument("--c", default="2", metavar="RATIONAL")
        p.add_argument("--runs", type=int, default=100)
        if name == "consensus":
            p.add_argument("--crashes", type=int, help="crashes per run (default f)")

    p = sub.add_parser("cluster-compare", help="count vs represented quorums on a cluster topology")
    common(p)
    sim_opts(p)
    p.add_argument("--ops", type=int, default=3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report, code = COMMANDS[args.command](args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    print(render(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
