"""Core data model: the six-entity hierarchy and its status state machines.

Task > TaskRun > Assignment > Unit describe the work; Worker and Agent
describe who did it. Entities are immutable snapshots of store rows — all
mutation goes through the store, which enforces the transition graphs
defined here.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import TYPE_CHECKING, Any

from .errors import EmptyAssignment, IllegalTransition

if TYPE_CHECKING:
    from .store import LocalStore


class UnitStatus(str, Enum):
    CREATED = "created"
    LAUNCHED = "launched"
    ASSIGNED = "assigned"
    COMPLETED = "completed"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    SOFT_REJECTED = "soft_rejected"
    EXPIRED = "expired"


class AgentStatus(str, Enum):
    REGISTERED = "registered"
    ONBOARDING = "onboarding"
    IN_TASK = "in_task"
    SUBMITTED = "submitted"
    DISCONNECTED = "disconnected"
    TIMEOUT = "timeout"
    RETURNED = "returned"
    APPROVED = "approved"
    REJECTED = "rejected"
    SOFT_REJECTED = "soft_rejected"


class AssignmentStatus(str, Enum):
    CREATED = "created"
    LAUNCHED = "launched"
    ASSIGNED = "assigned"
    COMPLETED = "completed"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    SOFT_REJECTED = "soft_rejected"
    EXPIRED = "expired"
    MIXED = "mixed"


class UnitKind(str, Enum):
    REAL = "real"
    GOLD = "gold"
    SCREENING = "screening"


class LifecycleEvent(str, Enum):
    """Events that move a Unit along its lifecycle."""

    LAUNCH = "launch"
    ASSIGN = "assign"
    COMPLETE = "complete"
    APPROVE = "approve"
    REJECT = "reject"
    SOFT_REJECT = "soft_reject"
    EXPIRE = "expire"
    RELAUNCH = "relaunch"


class AgentEvent(str, Enum):
    """Events that move an Agent along its lifecycle."""

    BEGIN_ONBOARDING = "begin_onboarding"
    BEGIN_TASK = "begin_task"
    SUBMIT = "submit"
    DISCONNECT = "disconnect"
    TIMEOUT = "timeout"
    RETURN = "return"
    APPROVE = "approve"
    REJECT = "reject"
    SOFT_REJECT = "soft_reject"


# The complete unit transition graph. Anything not listed raises.
UNIT_TRANSITIONS: dict[tuple[UnitStatus, LifecycleEvent], UnitStatus] = {
    (UnitStatus.CREATED, LifecycleEvent.LAUNCH): UnitStatus.LAUNCHED,
    (UnitStatus.LAUNCHED, LifecycleEvent.ASSIGN): UnitStatus.ASSIGNED,
    (UnitStatus.LAUNCHED, LifecycleEvent.EXPIRE): UnitStatus.EXPIRED,
    (UnitStatus.ASSIGNED, LifecycleEvent.COMPLETE): UnitStatus.COMPLETED,
    (UnitStatus.ASSIGNED, LifecycleEvent.RELAUNCH): UnitStatus.LAUNCHED,
    (UnitStatus.ASSIGNED, LifecycleEvent.EXPIRE): UnitStatus.EXPIRED,
    (UnitStatus.COMPLETED, LifecycleEvent.APPROVE): UnitStatus.ACCEPTED,
    (UnitStatus.COMPLETED, LifecycleEvent.REJECT): UnitStatus.REJECTED,
    (UnitStatus.COMPLETED, LifecycleEvent.SOFT_REJECT): UnitStatus.SOFT_REJECTED,
}

AGENT_TRANSITIONS: dict[tuple[AgentStatus, AgentEvent], AgentStatus] = {
    (AgentStatus.REGISTERED, AgentEvent.BEGIN_ONBOARDING): AgentStatus.ONBOARDING,
    (AgentStatus.REGISTERED, AgentEvent.BEGIN_TASK): AgentStatus.IN_TASK,
    (AgentStatus.ONBOARDING, AgentEvent.BEGIN_TASK): AgentStatus.IN_TASK,
    (AgentStatus.ONBOARDING, AgentEvent.REJECT): AgentStatus.REJECTED,
    (AgentStatus.IN_TASK, AgentEvent.SUBMIT): AgentStatus.SUBMITTED,
    (AgentStatus.IN_TASK, AgentEvent.DISCONNECT): AgentStatus.DISCONNECTED,
    (AgentStatus.IN_TASK, AgentEvent.TIMEOUT): AgentStatus.TIMEOUT,
    (AgentStatus.IN_TASK, AgentEvent.RETURN): AgentStatus.RETURNED,
    (AgentStatus.SUBMITTED, AgentEvent.APPROVE): AgentStatus.APPROVED,
    (AgentStatus.SUBMITTED, AgentEvent.REJECT): AgentStatus.REJECTED,
    (AgentStatus.SUBMITTED, AgentEvent.SOFT_REJECT): AgentStatus.SOFT_REJECTED,
}

UNIT_TERMINAL = frozenset(
    {UnitStatus.ACCEPTED, UnitStatus.REJECTED, UnitStatus.SOFT_REJECTED, UnitStatus.EXPIRED}
)

# Statuses that count as "the work got done" for conservation accounting.
UNIT_DONE = frozenset(
    {UnitStatus.COMPLETED, UnitStatus.ACCEPTED, UnitStatus.REJECTED, UnitStatus.SOFT_REJECTED}
)

AGENT_TERMINAL = frozenset(
    {
        AgentStatus.DISCONNECTED,
        AgentStatus.TIMEOUT,
        AgentStatus.RETURNED,
        AgentStatus.APPROVED,
        AgentStatus.REJECTED,
        AgentStatus.SOFT_REJECTED,
    }
)

# Agents occupying a worker slot right now.
AGENT_ACTIVE = frozenset({AgentStatus.REGISTERED, AgentStatus.ONBOARDING, AgentStatus.IN_TASK})

# Legal (old, new) pairs, derived from the event graphs; the store checks
# direct status updates against these.
LEGAL_UNIT_CHANGES = frozenset((old, new) for (old, _), new in UNIT_TRANSITIONS.items())
LEGAL_AGENT_CHANGES = frozenset((old, new) for (old, _), new in AGENT_TRANSITIONS.items())


def transition_unit(current: UnitStatus, event: LifecycleEvent) -> UnitStatus:
    """Return the successor status, or raise IllegalTransition."""
    try:
        return UNIT_TRANSITIONS[(current, event)]
    except KeyError:
        raise IllegalTransition(current.value, event.value) from None


def transition_agent(current: AgentStatus, event: AgentEvent) -> AgentStatus:
    """Return the successor status, or raise IllegalTransition."""
    try:
        return AGENT_TRANSITIONS[(current, event)]
    except KeyError:
        raise IllegalTransition(current.value, event.value) from None


@dataclass(frozen=True)
class Task:
    id: str
    name: str
    task_type: str
    created_at: int


@dataclass(frozen=True)
class TaskRun:
    id: str
    task_id: str
    config: dict[str, Any]
    is_completed: bool
    created_at: int


@dataclass(frozen=True)
class Assignment:
    id: str
    task_run_id: str
    input_item: Any
    created_at: int


@dataclass(frozen=True)
class Unit:
    id: str
    assignment_id: str
    unit_index: int
    pay_amount: Decimal
    status: UnitStatus
    provider_external_id: str | None
    unit_kind: UnitKind
    # Index into the configured gold/screening item list; None for REAL units.
    qa_index: int | None
    created_at: int


@dataclass(frozen=True)
class Worker:
    id: str
    worker_name: str
    provider_type: str
    is_blocked: bool
    created_at: int


@dataclass(frozen=True)
class Agent:
    id: str
    worker_id: str
    unit_id: str
    status: AgentStatus
    state_ref: str
    created_at: int


def assignment_status(units: list[Unit]) -> AssignmentStatus:
    """Lift unit statuses to assignment level: unanimous status or MIXED."""
    if not units:
        raise EmptyAssignment("assignment has no units")
    statuses = {unit.status for unit in units}
    if len(statuses) == 1:
        return AssignmentStatus(statuses.pop().value)
    return AssignmentStatus.MIXED


def build_assignment_structure(
    store: "LocalStore",
    run: TaskRun,
    input_items: list[Any],
    units_per_assignment: int,
    pay_amount: Decimal | str | float = Decimal("0"),
) -> list[Assignment]:
    """Create one Assignment per input item, each with units_per_assignment
    CREATED Units (unit_index 0..n-1). All rows land in one transaction, so a
    failure mid-way leaves nothing behind.
    """
    if not input_items:
        raise EmptyAssignment("input_items must be non-empty")
    if units_per_assignment < 1:
        raise ValueError("units_per_assignment must be >= 1")
    pay = Decimal(str(pay_amount))
    if pay < 0:
        raise ValueError("pay_amount must be >= 0")

    assignments: list[Assignment] = []
    with store.transaction():
        for item in input_items:
            assignment_id = store.create_record(
                "assignment", {"task_run_id": run.id, "input_item": item}
            )
            for index in range(units_per_assignment):
                store.create_record(
                    "unit",
                    {
                        "assignment_id": assignment_id,
                        "unit_index": index,
                        "pay_amount": pay,
                        "unit_kind": UnitKind.REAL,
                    },
                )
            assignments.append(store.get_assignment(assignment_id))
    return assignments
