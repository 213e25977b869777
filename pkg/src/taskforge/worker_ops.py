"""Worker qualifications (grant/revoke/query, requirement checks) and the
feedback + moderated-tips channels."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import TYPE_CHECKING, Any

from .errors import AlreadyModerated, EmptyFeedback, UnknownComparator

if TYPE_CHECKING:
    from .entities import Worker
    from .providers import CrowdProvider
    from .store import LocalStore

# Granting this qualification blocks a worker everywhere; the operator adds
# a NOT_EXISTS requirement on it to every eligibility check.
GLOBAL_BLOCK_QUALIFICATION = "global-block"


class Comparator(str, Enum):
    EXISTS = "exists"
    NOT_EXISTS = "not_exists"
    EQUAL = "equal"
    NOT_EQUAL = "not_equal"
    GREATER = "greater"
    LESS = "less"
    GREATER_EQ = "greater_eq"
    LESS_EQ = "less_eq"


class TipStatus(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class Qualification:
    id: str
    qualification_name: str
    description: str | None
    created_at: int


@dataclass(frozen=True)
class GrantedQualification:
    worker_id: str
    qualification_id: str
    qualification_name: str
    value: int
    granted_at: int


@dataclass(frozen=True)
class FeedbackEntry:
    id: str
    agent_id: str
    text: str
    category: str | None
    created_at: int
    reviewed: bool
    bonus_sent: Decimal | None


@dataclass(frozen=True)
class TipEntry:
    id: str
    agent_id: str
    header: str
    body: str
    status: TipStatus
    created_at: int


@dataclass(frozen=True)
class QualificationRequirement:
    qualification_name: str
    comparator: Comparator
    value: int | None = None


def grant(store: "LocalStore", worker: "Worker", qualification_name: str, value: int = 1) -> None:
    """Upsert a grant; the qualification itself is auto-created on first use."""
    store.grant_qualification(worker.id, qualification_name, int(value))


def revoke(store: "LocalStore", worker: "Worker", qualification_name: str) -> None:
    """Delete the grant outright (absence, not value 0). NotFound if absent."""
    store.revoke_qualification(worker.id, qualification_name)


def granted_value(store: "LocalStore", worker_id: str, qualification_name: str) -> int | None:
    return store.get_granted_value(worker_id, qualification_name)


def evaluate_requirement(
    granted: int | None, comparator: Comparator, value: int | None
) -> bool:
    """Pure single-requirement check against a grant snapshot (None = absent).

    EXISTS/NOT_EXISTS ignore value; every value comparator is false when the
    grant is absent.
    """
    if comparator is Comparator.EXISTS:
        return granted is not None
    if comparator is Comparator.NOT_EXISTS:
        return granted is None
    if granted is None:
        return False
    if value is None:
        raise UnknownComparator(f"comparator {comparator.value} requires a value")
    if comparator is Comparator.EQUAL:
        return granted == value
    if comparator is Comparator.NOT_EQUAL:
        return granted != value
    if comparator is Comparator.GREATER:
        return granted > value
    if comparator is Comparator.LESS:
        return granted < value
    if comparator is Comparator.GREATER_EQ:
        return granted >= value
    if comparator is Comparator.LESS_EQ:
        return granted <= value
    raise UnknownComparator(str(comparator))


def check_requirements(
    store: "LocalStore",
    worker: "Worker",
    requirements: list[QualificationRequirement],
) -> bool:
    """Conjunction over all requirements; [] is vacuously true."""
    for requirement in requirements:
        if not isinstance(requirement.comparator, Comparator):
            raise UnknownComparator(str(requirement.comparator))
        granted = store.get_granted_value(worker.id, requirement.qualification_name)
        if not evaluate_requirement(granted, requirement.comparator, requirement.value):
            return False
    return True


def submit_feedback(
    store: "LocalStore", agent_id: str, text: str, category: str | None = None
) -> FeedbackEntry:
    if not text:
        raise EmptyFeedback("feedback text must be non-empty")
    store.get_agent(agent_id)
    feedback_id = store.create_record(
        "feedback", {"agent_id": agent_id, "text": text, "category": category}
    )
    return store.get_feedback(feedback_id)


def list_feedback(
    store: "LocalStore",
    task_id: str,
    reviewed: bool | None = None,
    category: str | None = None,
) -> list[FeedbackEntry]:
    entries = store.find_feedback_for_task(task_id)
    if reviewed is not None:
        entries = [e for e in entries if e.reviewed == reviewed]
    if category is not None:
        entries = [e for e in entries if e.category == category]
    return entries


def review_feedback(
    store: "LocalStore",
    provider: "CrowdProvider | None",
    feedback_id: str,
    bonus: Decimal | str | None = None,
    reason: str = "feedback bonus",
) -> FeedbackEntry:
    """Mark reviewed; optionally route a bonus to the submitting worker."""
    entry = store.get_feedback(feedback_id)
    amount = Decimal(str(bonus)) if bonus is not None else None
    if amount is not None:
        if provider is None:
            raise ValueError("a provider is required to send a bonus")
        agent = store.get_agent(entry.agent_id)
        worker = store.get_worker(agent.worker_id)
        provider.bonus_worker(worker, amount, reason)
    store.update_feedback(feedback_id, reviewed=True, bonus_sent=amount)
    return store.get_feedback(feedback_id)


def submit_tip(store: "LocalStore", agent_id: str, header: str, body: str) -> TipEntry:
    if not header or not body:
        raise EmptyFeedback("tip header and body must be non-empty")
    store.get_agent(agent_id)
    tip_id = store.create_record("tip", {"agent_id": agent_id, "header": header, "body": body})
    return store.get_tip(tip_id)


def moderate_tip(store: "LocalStore", tip_id: str, decision: str) -> TipEntry:
    """Accept or reject a PENDING tip; moderating twice raises."""
    decision = decision.lower()
    if decision not in ("accept", "reject"):
        raise ValueError(f"decision must be accept or reject, got {decision!r}")
    tip = store.get_tip(tip_id)
    if tip.status is not TipStatus.PENDING:
        raise AlreadyModerated(f"tip {tip_id} already {tip.status.value}")
    new_status = TipStatus.ACCEPTED if decision == "accept" else TipStatus.REJECTED
    store.update_tip_status(tip_id, new_status)
    return store.get_tip(tip_id)


def accepted_tips(store: "LocalStore", task_id: str) -> list[TipEntry]:
    """Only ACCEPTED tips, newest first — the list served to task clients."""
    tips = [t for t in store.find_tips_for_task(task_id) if t.status is TipStatus.ACCEPTED]
    tips.sort(key=lambda t: t.created_at, reverse=True)
    return tips


def tips_payload(store: "LocalStore", task_id: str) -> list[dict[str, Any]]:
    """Accepted tips in the shape embedded in AGENT_DETAILS payloads."""
    return [{"header": t.header, "body": t.body} for t in accepted_tips(store, task_id)]
