"""Core model: status state machines and assignment construction."""

from __future__ import annotations

from decimal import Decimal

import pytest

from taskforge.entities import (
    AgentEvent,
    AgentStatus,
    AssignmentStatus,
    LifecycleEvent,
    UnitKind,
    UnitStatus,
    assignment_status,
    build_assignment_structure,
    transition_agent,
    transition_unit,
)
from taskforge.errors import EmptyAssignment, IllegalTransition
from taskforge.store import LocalStore

# Independent edge lists, transcribed by hand; the oracle below enumerates the
# full cross-product against these rather than trusting the implementation's
# own transition table.
UNIT_EDGES = {
    ("created", "launch"): "launched",
    ("launched", "assign"): "assigned",
    ("launched", "expire"): "expired",
    ("assigned", "complete"): "completed",
    ("assigned", "relaunch"): "launched",
    ("assigned", "expire"): "expired",
    ("completed", "approve"): "accepted",
    ("completed", "reject"): "rejected",
    ("completed", "soft_reject"): "soft_rejected",
}

AGENT_EDGES = {
    ("registered", "begin_onboarding"): "onboarding",
    ("registered", "begin_task"): "in_task",
    ("onboarding", "begin_task"): "in_task",
    ("onboarding", "reject"): "rejected",
    ("in_task", "submit"): "submitted",
    ("in_task", "disconnect"): "disconnected",
    ("in_task", "timeout"): "timeout",
    ("in_task", "return"): "returned",
    ("submitted", "approve"): "approved",
    ("submitted", "reject"): "rejected",
    ("submitted", "soft_reject"): "soft_rejected",
}


def test_first_edge_and_review_edge():
    assert transition_unit(UnitStatus.CREATED, LifecycleEvent.LAUNCH) is UnitStatus.LAUNCHED
    assert transition_unit(UnitStatus.COMPLETED, LifecycleEvent.APPROVE) is UnitStatus.ACCEPTED


def test_unit_transition_cross_product_matches_edge_list():
    legal_seen = {}
    for status in UnitStatus:
        for event in LifecycleEvent:
            key = (status.value, event.value)
            if key in UNIT_EDGES:
                result = transition_unit(status, event)
                legal_seen[key] = result.value
            else:
                with pytest.raises(IllegalTransition):
                    transition_unit(status, event)
    assert legal_seen == UNIT_EDGES


def test_agent_transition_cross_product_matches_edge_list():
    legal_seen = {}
    for status in AgentStatus:
        for event in AgentEvent:
            key = (status.value, event.value)
            if key in AGENT_EDGES:
                legal_seen[key] = transition_agent(status, event).value
            else:
                with pytest.raises(IllegalTransition):
                    transition_agent(status, event)
    assert legal_seen == AGENT_EDGES


def test_transition_unit_is_pure():
    for _ in range(3):
        assert transition_unit(UnitStatus.ASSIGNED, LifecycleEvent.RELAUNCH) is UnitStatus.LAUNCHED


def _unit(status: UnitStatus, index: int = 0):
    from taskforge.entities import Unit

    return Unit(
        id=str(index),
        assignment_id="a",
        unit_index=index,
        pay_amount=Decimal("0"),
        status=status,
        provider_external_id=None,
        unit_kind=UnitKind.REAL,
        qa_index=None,
        created_at=0,
    )


def test_assignment_status_unanimous_lift():
    units = [_unit(UnitStatus.ACCEPTED, 0), _unit(UnitStatus.ACCEPTED, 1)]
    assert assignment_status(units) is AssignmentStatus.ACCEPTED


def test_assignment_status_mixed():
    units = [_unit(UnitStatus.ASSIGNED, 0), _unit(UnitStatus.COMPLETED, 1)]
    assert assignment_status(units) is AssignmentStatus.MIXED


def test_assignment_status_completed_requires_both_redundant_units():
    # Two redundant labels: the assignment is done only once both units are.
    units = [_unit(UnitStatus.COMPLETED, 0), _unit(UnitStatus.COMPLETED, 1)]
    assert assignment_status(units) is AssignmentStatus.COMPLETED
    partial = [_unit(UnitStatus.COMPLETED, 0), _unit(UnitStatus.ASSIGNED, 1)]
    assert assignment_status(partial) is not AssignmentStatus.COMPLETED


def test_assignment_status_empty_rejected():
    with pytest.raises(EmptyAssignment):
        assignment_status([])


@pytest.fixture()
def store(tmp_path):
    handle = LocalStore(tmp_path / "data")
    yield handle
    handle.close()


@pytest.fixture()
def run(store):
    task_id = store.create_record("task", {"name": "t", "task_type": "static"})
    run_id = store.create_record("task_run", {"task_id": task_id, "config": {}})
    return store.get_task_run(run_id)


def test_build_structure_pilot_batch(store, run):
    items = [{"image": f"{i}.png"} for i in range(1000)]
    assignments = build_assignment_structure(store, run, items, units_per_assignment=1)
    assert len(assignments) == 1000
    units = store.find_records("unit", task_run_id=run.id)
    assert len(units) == 1000


def test_build_structure_redundant_pair(store, run):
    assignments = build_assignment_structure(store, run, [{"x": 1}], units_per_assignment=2)
    assert len(assignments) == 1
    units = store.find_records("unit", assignment_id=assignments[0].id)
    assert sorted(u.unit_index for u in units) == [0, 1]
    assert all(u.status is UnitStatus.CREATED for u in units)
    # redundant units share the input item
    assert assignments[0].input_item == {"x": 1}


def test_build_structure_rejects_empty_input(store, run):
    with pytest.raises(EmptyAssignment):
        build_assignment_structure(store, run, [], units_per_assignment=1)


def test_build_structure_unit_count_conservation(store, run):
    build_assignment_structure(store, run, [{"i": i} for i in range(7)], units_per_assignment=3)
    assignments = store.find_records("assignment", task_run_id=run.id)
    per_assignment = [
        len(store.find_records("unit", assignment_id=a.id)) for a in assignments
    ]
    assert sum(per_assignment) == len(store.find_records("unit", task_run_id=run.id)) == 21
