"""Operator: launch, eligibility (with brute-force oracle), monitoring,
shutdown."""

from __future__ import annotations

import random
import socket
import urllib.request

import pytest

from taskforge.config import load_layered_config
from taskforge.entities import (
    AgentStatus,
    UnitStatus,
    build_assignment_structure,
)
from taskforge.errors import ConfigError, DeployError
from taskforge.operator import Operator, RunConfig, find_eligible_unit
from taskforge.providers import MockProvider
from taskforge.store import LocalStore

_ABANDONED = {AgentStatus.DISCONNECTED, AgentStatus.TIMEOUT, AgentStatus.RETURNED}


@pytest.fixture()
def store(tmp_path):
    handle = LocalStore(tmp_path / "data")
    yield handle
    handle.close()


def _tree(**overrides):
    tree = load_layered_config(None, [])
    tree["task"]["name"] = overrides.pop("name", "op-test")
    tree["task"]["assignment_duration"] = overrides.pop("assignment_duration", 30.0)
    tree["architect"]["monitor_interval"] = overrides.pop("monitor_interval", 60.0)
    for key, value in overrides.items():
        tree["task"][key] = value
    return tree


def test_launch_counts_and_alive(store):
    operator = Operator(store)
    handle = operator.launch_run(
        _tree(units_per_assignment=2), input_items=[{"q": i} for i in range(10)]
    )
    try:
        assert handle.counters["units_launched"] == 20
        assert handle.url and handle.url.startswith("http://localhost:")
        assert handle.verify_conservation()
    finally:
        operator.shutdown_run(handle, force=True)


def test_unknown_task_type_fails_before_server(store):
    operator = Operator(store)
    with pytest.raises(ConfigError):
        operator.launch_run(_tree(task_type="not-a-blueprint"), input_items=[{"q": 1}])
    assert store.find_records("task_run") == []


def test_empty_items_rejected(store):
    operator = Operator(store)
    with pytest.raises(ConfigError):
        operator.launch_run(_tree(), input_items=[])


def test_deploy_failure_rolls_back(store):
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        tree = _tree()
        tree["architect"]["port"] = port
        operator = Operator(store)
        with pytest.raises(DeployError):
            operator.launch_run(tree, input_items=[{"q": i} for i in range(4)])
        units = store.find_records("unit")
        assert len(units) == 4
        assert all(u.status is UnitStatus.EXPIRED for u in units)
    finally:
        blocker.close()


def test_shutdown_expires_unclaimed(store):
    operator = Operator(store)
    handle = operator.launch_run(_tree(), input_items=[{"q": i} for i in range(3)])
    summary = operator.shutdown_run(handle)
    assert summary["counters"]["units_expired"] == 3
    assert summary["counters"]["units_completed"] == 0
    # idempotent
    assert operator.shutdown_run(handle) == summary


def test_shutdown_clean_when_all_completed(store):
    operator = Operator(store)
    handle = operator.launch_run(_tree(name="clean"), input_items=[{"q": 0}])
    provider = MockProvider(store)
    with provider.mock_connect("w1", handle.channel_url) as session:
        session.register()
        session.submit({"a": 1})
    assert handle.wait_for_completion(timeout=10)
    summary = operator.shutdown_run(handle)
    assert summary["counters"]["units_expired"] == 0
    assert summary["counters"]["units_completed"] == 1


def test_monitor_tick_snapshot_only_when_quiet(store):
    operator = Operator(store)
    handle = operator.launch_run(_tree(), input_items=[{"q": 0}])
    try:
        actions = operator.monitor_tick(handle)
        assert actions == []
        histogram = handle.unit_status_histogram()
        assert sum(histogram.values()) == 1
        assert (store.data_root / "runs" / handle.task_run_id / "metrics.jsonl").exists()
    finally:
        operator.shutdown_run(handle, force=True)


def test_monitor_tick_times_out_silent_agent(store):
    clock = {"now": 100.0}
    operator = Operator(store)
    handle = operator.launch_run(
        _tree(), input_items=[{"q": 0}], clock=lambda: clock["now"]
    )
    provider = MockProvider(store)
    session = provider.mock_connect("w1", handle.channel_url)
    try:
        details = session.register()
        agent_id = details.payload["agent_id"]
        unit_id = details.payload["unit_id"]
        clock["now"] += 31.0  # heartbeat_timeout defaults to 30s
        actions = operator.monitor_tick(handle)
        assert [str(a) for a in actions] == [f"DISCONNECT({agent_id})", f"RELAUNCH({unit_id})"]
        # the runner thread enacts the disconnect: unit relaunches
        deadline = __import__("time").monotonic() + 5
        while __import__("time").monotonic() < deadline:
            if store.get_unit(unit_id).status is UnitStatus.LAUNCHED:
                break
        assert store.get_unit(unit_id).status is UnitStatus.LAUNCHED
        assert store.get_agent(agent_id).status is AgentStatus.DISCONNECTED
        assert handle.verify_conservation()
    finally:
        session.close()
        operator.shutdown_run(handle, force=True)


def test_force_shutdown_preserves_partial_state(store):
    operator = Operator(store)
    handle = operator.launch_run(_tree(), input_items=[{"q": 0}])
    provider = MockProvider(store)
    session = provider.mock_connect("w1", handle.channel_url)
    details = session.register()
    agent_id = details.payload["agent_id"]
    session.act("partial_save", {"draft": "half done"})
    import time

    time.sleep(0.2)  # let the act packet land
    summary = operator.shutdown_run(handle, force=True)
    session.close()
    assert store.get_agent(agent_id).status is AgentStatus.DISCONNECTED
    state = store.load_agent_state(agent_id)
    assert state is not None and state.outputs == {"draft": "half done"}
    assert summary["counters"]["units_expired"] == 1


# -- eligibility -----------------------------------------------------------------


def test_eligibility_oracle_randomized(tmp_path):
    from tests_support_eligibility import build_random_instance, oracle_set, tie_break_min

    failures = []
    for seed in range(30):
        rng = random.Random(seed)
        store = LocalStore(tmp_path / f"d{seed}")
        run, workers, config = build_random_instance(store, rng)
        for worker in workers:
            chosen = find_eligible_unit(
                store, worker, run.id, config, None, ("task-failed",)
            )
            allowed = oracle_set(store, worker, run.id, config, ("task-failed",))
            if not allowed:
                if chosen is not None:
                    failures.append((seed, worker.id, "expected none"))
            else:
                expected = tie_break_min(store, run.id, allowed)
                if chosen is None or chosen.id != expected.id:
                    failures.append((seed, worker.id, "wrong pick"))
                if chosen is not None and chosen.id not in {u.id for u in allowed}:
                    failures.append((seed, worker.id, "outside oracle set"))
        store.close()
    assert failures == []


def test_eligibility_excludes_sibling_units(store):
    # a worker who did unit 0 of an assignment never gets unit 1 of it
    task_id = store.create_record("task", {"name": "t", "task_type": "static"})
    run = store.get_task_run(store.create_record("task_run", {"task_id": task_id, "config": {}}))
    provider = MockProvider(store)
    build_assignment_structure(store, run, [{"i": 0}], 2)
    units = store.find_records("unit", task_run_id=run.id)
    for unit in units:
        provider.register_unit(unit)
    worker = store.ensure_worker("w1", "mock")
    store.update_unit_status(units[0].id, UnitStatus.ASSIGNED)
    agent_id = store.create_record("agent", {"worker_id": worker.id, "unit_id": units[0].id})
    store.update_agent_status(agent_id, AgentStatus.IN_TASK)
    store.update_unit_status(units[0].id, UnitStatus.COMPLETED)
    store.update_agent_status(agent_id, AgentStatus.SUBMITTED)
    config = RunConfig.from_tree(load_layered_config(None, []))
    assert find_eligible_unit(store, worker, run.id, config) is None
    other = store.ensure_worker("w2", "mock")
    chosen = find_eligible_unit(store, other, run.id, config)
    assert chosen is not None and chosen.id == units[1].id


def test_eligibility_max_units_boundary(store):
    task_id = store.create_record("task", {"name": "t", "task_type": "static"})
    run = store.get_task_run(store.create_record("task_run", {"task_id": task_id, "config": {}}))
    provider = MockProvider(store)
    build_assignment_structure(store, run, [{"i": 0}, {"i": 1}], 1)
    units = store.find_records("unit", task_run_id=run.id)
    for unit in units:
        provider.register_unit(unit)
    worker = store.ensure_worker("w1", "mock")
    store.update_unit_status(units[0].id, UnitStatus.ASSIGNED)
    agent_id = store.create_record("agent", {"worker_id": worker.id, "unit_id": units[0].id})
    store.update_agent_status(agent_id, AgentStatus.IN_TASK)
    store.update_unit_status(units[0].id, UnitStatus.COMPLETED)
    store.update_agent_status(agent_id, AgentStatus.SUBMITTED)
    tree = load_layered_config(None, ["task.maximum_units_per_worker=1"])
    config = RunConfig.from_tree(tree)
    assert find_eligible_unit(store, worker, run.id, config) is None


def test_eligibility_tie_break_earliest_assignment(store):
    task_id = store.create_record("task", {"name": "t", "task_type": "static"})
    run = store.get_task_run(store.create_record("task_run", {"task_id": task_id, "config": {}}))
    provider = MockProvider(store)
    build_assignment_structure(store, run, [{"i": 0}, {"i": 1}], 1)
    units = store.find_records("unit", task_run_id=run.id)
    for unit in units:
        provider.register_unit(unit)
    worker = store.ensure_worker("w1", "mock")
    config = RunConfig.from_tree(load_layered_config(None, []))
    chosen = find_eligible_unit(store, worker, run.id, config)
    assignments = store.find_records("assignment", task_run_id=run.id)
    earliest = min(assignments, key=lambda a: a.created_at)
    assert chosen is not None and chosen.assignment_id == earliest.id
