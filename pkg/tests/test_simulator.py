import pytest

from mixsim.checkers import check_atomic_swmr, check_collect_regularity, check_sdc_chain, sdc_vectors
from mixsim.protocols import MemoryWrite, TaggedValue
from mixsim.simulator import (
    AccessViolation,
    NotPartitionable,
    Op,
    RandomSeeded,
    RoundRobin,
    Scripted,
    SimConfig,
    SimulationError,
    flip_streams,
    measure_complexities,
    partition_scenario,
    register_workload,
    run,
    run_many,
    sequential_workload,
)
from mixsim.topology import Clustering, MemorySpec, from_clusters, from_memories, from_pure_mp


def cfg(**kw):
    base = dict(topology=from_pure_mp(5), f=2, workload=register_workload(5, writes=2, reads=1))
    base.update(kw)
    return SimConfig(**base)


def test_identical_configs_give_identical_traces():
    a, b = run(cfg(seed=3)), run(cfg(seed=3))
    assert a.export_trace() == b.export_trace()
    assert a.trace_hash() == b.trace_hash()
    assert a.export_metrics() == b.export_metrics()
    assert run(cfg(seed=4)).trace_hash() != a.trace_hash()


def test_sequential_read_after_write_returns_value():
    ops = sequential_workload([Op(0, "write", 7), Op(3, "read")])
    res = run(cfg(workload=ops, params={"v0": 0}))
    assert res.verdict == "Completed"
    assert res.responses()[3] == [TaggedValue(1, 7)]


def test_read_without_writes_returns_v0():
    res = run(cfg(workload=(Op(2, "read"),), params={"v0": "nothing"}))
    assert res.responses()[2] == [TaggedValue(0, "nothing")]


@pytest.mark.parametrize("adversary", [RandomSeeded(), RoundRobin()])
def test_adversaries_complete_failure_free(adversary):
    res = run(cfg(adversary=adversary))
    assert res.verdict == "Completed"
    assert all(r.complete for r in res.history.top_level())
    assert check_atomic_swmr(res.history).ok


def test_crashed_process_stops_others_finish():
    res = run(cfg(crash_plan=((4, 0), (3, 5))))
    assert res.crashed == {3, 4}
    for r in res.history.top_level():
        assert r.complete or r.process in res.crashed
    assert [action for _, p, action, _ in res.trace if p == 4] == ["crash"]


def test_budget_exhaustion_is_reported():
    assert run(cfg(step_budget=10)).verdict == "BudgetExhausted"


def test_bad_configs_are_rejected():
    with pytest.raises(ValueError):
        run(cfg(f=5))
    with pytest.raises(ValueError):
        run(cfg(workload=(Op(9, "read"),)))
    with pytest.raises(ValueError):
        run(cfg(quorum="represented"))  # needs clusters


def test_scripted_step_must_be_enabled():
    with pytest.raises(SimulationError):
        run(cfg(adversary=Scripted((("deliver", 0, 1),))))
    res = run(cfg(adversary=Scripted((("invoke", 0),))))
    assert res.trace[0][2] == "invoke" and res.trace[0][1] == 0


def test_memory_access_is_checked(monkeypatch):
    from mixsim.protocols import RegisterNode

    original = RegisterNode.handle_write_message

    def rogue(self, msg):
        return [MemoryWrite(None, 99, TaggedValue(msg.seq, msg.payload))] + original(self, msg)

    monkeypatch.setattr(RegisterNode, "handle_write_message", rogue)
    with pytest.raises(AccessViolation):
        run(cfg())


def test_flip_streams_are_reproducible_and_distinct():
    a = [r.random() for r in flip_streams(5, 3)]
    b = [r.random() for r in flip_streams(5, 3)]
    assert a == b and len(set(a)) == 3


def test_immediate_self_delivery_still_correct():
    res = run(cfg(immediate_self=True))
    assert res.verdict == "Completed" and check_atomic_swmr(res.history).ok


def test_complexities_failure_free():
    top = from_memories(4, [MemorySpec({0, 1, 2}, {1, 2, 3})])
    ops = sequential_workload([Op(0, "write", 1), Op(1, "read"), Op(0, "write", 2), Op(3, "read")])
    res = run(SimConfig(top, 1, seed=1, workload=ops))
    report = measure_complexities(res.history, res.metrics, top)
    assert report["ok"], report
    assert report["registers_allocated"] == report["rho"]
    kinds = [(row["kind"], row["messages_sent"], row["round_trips"]) for row in report["ops"]]
    assert kinds == [("write", 4, 1), ("read", 8, 2), ("write", 4, 1), ("read", 8, 2)]


def test_partition_scenario_refuses_unpartitionable():
    with pytest.raises(NotPartitionable):
        partition_scenario(from_pure_mp(5), 2)


def test_partition_scenario_on_clusters():
    top = from_clusters(Clustering([{0, 1, 2}, {3, 4}]))
    c = partition_scenario(top, 3)
    res = run(c)
    (read,) = [r for r in res.history.top_level() if r.kind == "read"]
    assert read.result == TaggedValue(0, 0)


def test_batched_collects_and_sdc():
    top = from_pure_mp(4)
    ops = tuple(Op(p, "write", 10 + p) for p in range(4)) + tuple(Op(p, "sdc", after=(p,)) for p in range(4))
    res = run(SimConfig(top, 1, seed=2, protocol="batch", workload=ops))
    assert res.verdict == "Completed"
    assert check_collect_regularity(res.history).ok
    vecs = sdc_vectors(res.history)
    assert len(vecs) == 4 and check_sdc_chain(vecs).ok


def test_sdc_in_quiescent_system_takes_two_collects():
    ops = (Op(0, "sdc"),)
    res = run(SimConfig(from_pure_mp(3), 1, seed=0, protocol="batch", workload=ops))
    (rec,) = res.history.of_kind("sdc")
    assert rec.detail["collects"] == 2


def test_sdc_interleaved_with_writes_needs_more_collects():
    seen = 0
    for seed in range(40):
        ops = (Op(0, "sdc"), Op(1, "write", 1), Op(1, "write", 2), Op(2, "write", 3))
        res = run(SimConfig(from_pure_mp(3), 1, seed=seed, protocol="batch", workload=ops))
        seen = max(seen, res.history.of_kind("sdc")[0].detail["collects"])
    assert seen >= 3


def test_run_many_matches_run():
    configs = [cfg(seed=s) for s in range(3)]
    hashes = [r.trace_hash() for r in run_many(configs)]
    assert hashes == [run(c).trace_hash() for c in configs]
