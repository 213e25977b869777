"""MockProvider: unit registration/expiry, worker ops, the action ledger."""

from __future__ import annotations

from decimal import Decimal

import pytest

from taskforge.entities import UnitStatus, build_assignment_structure
from taskforge.errors import IllegalTransition, InvalidAmount
from taskforge.providers import MockProvider, get_provider_factory
from taskforge.store import LocalStore


@pytest.fixture()
def store(tmp_path):
    handle = LocalStore(tmp_path / "data")
    yield handle
    handle.close()


@pytest.fixture()
def provider(store):
    return MockProvider(store)


def _units(store, count=1):
    task_id = store.create_record("task", {"name": "t", "task_type": "static"})
    run = store.get_task_run(store.create_record("task_run", {"task_id": task_id, "config": {}}))
    build_assignment_structure(store, run, [{"i": i} for i in range(count)], 1)
    return store.find_records("unit", task_run_id=run.id)


def test_register_unit_launches_with_external_id(store, provider):
    unit = _units(store)[0]
    external_id = provider.register_unit(unit)
    assert external_id == f"mock-{unit.id}"
    refreshed = store.get_unit(unit.id)
    assert refreshed.status is UnitStatus.LAUNCHED
    assert refreshed.provider_external_id == external_id


def test_register_launched_unit_rejected(store, provider):
    unit = _units(store)[0]
    provider.register_unit(unit)
    with pytest.raises(IllegalTransition):
        provider.register_unit(store.get_unit(unit.id))


def test_register_many_distinct_ids(store, provider):
    units = _units(store, count=20)
    ids = {provider.register_unit(u) for u in units}
    assert len(ids) == 20


def test_expire_launched_and_idempotence(store, provider):
    unit = _units(store)[0]
    provider.register_unit(unit)
    provider.expire_unit(store.get_unit(unit.id))
    assert store.get_unit(unit.id).status is UnitStatus.EXPIRED
    provider.expire_unit(store.get_unit(unit.id))  # no-op
    assert store.get_unit(unit.id).status is UnitStatus.EXPIRED


def test_block_worker_sets_is_blocked(store, provider):
    worker = store.ensure_worker("w1", "mock")
    provider.block_worker(worker, "spam")
    assert store.get_worker(worker.id).is_blocked is True
    provider.unblock_worker(store.get_worker(worker.id), "appeal")
    assert store.get_worker(worker.id).is_blocked is False


def test_bonus_recorded_in_ledger(store, provider):
    worker = store.ensure_worker("w1", "mock")
    provider.bonus_worker(worker, Decimal("0.50"), "good work")
    entries = [e for e in provider.read_ledger() if e["kind"] == "bonus"]
    assert entries[0]["worker_name"] == "w1"
    assert entries[0]["amount"] == "0.50"
    assert entries[0]["reason"] == "good work"


def test_bonus_invalid_amount(store, provider):
    worker = store.ensure_worker("w1", "mock")
    with pytest.raises(InvalidAmount):
        provider.bonus_worker(worker, Decimal("-1"), "nope")
    with pytest.raises(InvalidAmount):
        provider.bonus_worker(worker, Decimal("0"), "nope")


def test_message_recorded(store, provider):
    worker = store.ensure_worker("w1", "mock")
    provider.message_worker(worker, "please redo task 5")
    entries = [e for e in provider.read_ledger() if e["kind"] == "message"]
    assert entries[0]["text"] == "please redo task 5"


def test_ledger_append_only_and_bonus_total(store, provider):
    worker = store.ensure_worker("w1", "mock")
    provider.bonus_worker(worker, Decimal("0.25"), "a")
    count_after_first = len(provider.read_ledger())
    provider.bonus_worker(worker, Decimal("0.75"), "b")
    assert len(provider.read_ledger()) == count_after_first + 1
    assert provider.bonus_total() == Decimal("1.00")


def test_ledger_filter_by_run(store, provider):
    units = _units(store, count=2)
    provider.register_unit(units[0])
    run_id = store.get_assignment(units[0].assignment_id).task_run_id
    assert len(provider.read_ledger(run_id=run_id)) == 1
    assert provider.read_ledger(run_id="424242") == []


def test_provider_registry(store):
    assert isinstance(get_provider_factory("mock")(store), MockProvider)
