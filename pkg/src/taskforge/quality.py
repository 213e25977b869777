"""Composable quality-assurance gates: onboarding, gold units, screening.

All three attach to either shipped blueprint. Failure is task-scoped: gates
grant disqualifications tied to the task's configured qualification names,
never provider-level blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable

from .entities import UnitKind

if TYPE_CHECKING:
    from .entities import Worker
    from .store import LocalStore

FAILED_SUFFIX = "-failed"

# Gold counters ride the qualification table under derived names so they
# persist across runs like any other worker state.
_GOLD_STAT_FIELDS = ("seen", "correct", "streak")


class OnboardingDecision(str, Enum):
    NEEDS_ONBOARDING = "needs_onboarding"
    PASSED = "passed"
    FAILED = "failed"


class GoldAction(str, Enum):
    NONE = "none"
    SOFT_BLOCK = "soft_block"


class ScreeningOutcome(str, Enum):
    GIVE_SCREENING_UNIT = "give_screening_unit"
    ALREADY_PASSED = "already_passed"
    BLOCKED = "blocked"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class OnboardingConfig:
    onboarding_qualification_name: str
    onboarding_payload: Any

    def __post_init__(self) -> None:
        if not self.onboarding_qualification_name:
            raise ValueError("onboarding_qualification_name must be non-empty")

    @property
    def failed_qualification_name(self) -> str:
        return self.onboarding_qualification_name + FAILED_SUFFIX


@dataclass(frozen=True)
class GoldConfig:
    gold_items: tuple[tuple[Any, Any], ...]
    gold_qualification_name: str
    gold_rate: float = 0.2
    min_golds_before_judgement: int = 3
    min_accuracy: float = 0.7

    def __post_init__(self) -> None:
        if not self.gold_items:
            raise ValueError("gold_items must be non-empty when the gold mixin is enabled")
        if not 0 < self.gold_rate <= 1:
            raise ValueError("gold_rate must be in (0, 1]")
        if self.min_golds_before_judgement < 1:
            raise ValueError("min_golds_before_judgement must be >= 1")
        if not 0 <= self.min_accuracy <= 1:
            raise ValueError("min_accuracy must be in [0, 1]")

    @property
    def failed_qualification_name(self) -> str:
        return self.gold_qualification_name + FAILED_SUFFIX


@dataclass(frozen=True)
class ScreeningConfig:
    screening_items: tuple[Any, ...]
    screening_validator: Callable[[Any], bool] | None
    max_screening_units: int
    passed_qualification_name: str
    blocked_qualification_name: str

    def __post_init__(self) -> None:
        if not self.screening_items:
            raise ValueError("screening_items must be non-empty when screening is enabled")
        if self.max_screening_units < 0:
            raise ValueError("max_screening_units must be >= 0")


@dataclass(frozen=True)
class WorkerGoldStats:
    worker_id: str
    golds_seen: int = 0
    golds_correct: int = 0
    units_since_last_gold: int = 0

    @property
    def accuracy(self) -> float | None:
        if self.golds_seen == 0:
            return None
        return self.golds_correct / self.golds_seen


@dataclass(frozen=True)
class ScreeningDecision:
    outcome: ScreeningOutcome
    item: Any = None
    item_index: int | None = None


def onboarding_gate(
    store: "LocalStore",
    worker: "Worker",
    cfg: OnboardingConfig,
    validator: Callable[[Any], bool] | None,
    submission: Any = None,
) -> OnboardingDecision:
    """Decide a worker's onboarding standing; scores at most once per worker.

    Workers already holding the pass/fail qualification are answered from the
    grant without touching the validator. A missing validator counts as an
    always-pass.
    """
    if store.get_granted_value(worker.id, cfg.onboarding_qualification_name) is not None:
        return OnboardingDecision.PASSED
    if store.get_granted_value(worker.id, cfg.failed_qualification_name) is not None:
        return OnboardingDecision.FAILED
    if submission is None:
        return OnboardingDecision.NEEDS_ONBOARDING
    passed = True if validator is None else bool(validator(submission))
    name = cfg.onboarding_qualification_name if passed else cfg.failed_qualification_name
    store.grant_qualification(worker.id, name, 1)
    return OnboardingDecision.PASSED if passed else OnboardingDecision.FAILED


def gold_interval(cfg: GoldConfig) -> int:
    return math.ceil(1 / cfg.gold_rate)


def next_unit_kind(stats: WorkerGoldStats, cfg: GoldConfig) -> UnitKind:
    """GOLD when the counted slot reaches the cadence interval, else REAL.

    units_since_last_gold counts served units since the last gold including
    the slot being decided (the caller increments before asking). The very
    first unit a worker ever gets is REAL.
    """
    if stats.golds_seen == 0 and stats.units_since_last_gold <= 1:
        return UnitKind.REAL
    if stats.units_since_last_gold >= gold_interval(cfg):
        return UnitKind.GOLD
    return UnitKind.REAL


def gold_item_for(stats: WorkerGoldStats, cfg: GoldConfig) -> tuple[int, Any, Any]:
    """Next gold item for this worker: sequential, so no item repeats until
    the worker has been scored on all of them."""
    index = stats.golds_seen % len(cfg.gold_items)
    payload, expected = cfg.gold_items[index]
    return index, payload, expected


def record_gold_result(
    stats: WorkerGoldStats, correct: bool, cfg: GoldConfig
) -> tuple[WorkerGoldStats, GoldAction]:
    """Fold one scored gold into the stats; judge only once enough golds
    have been seen."""
    updated = replace(
        stats,
        golds_seen=stats.golds_seen + 1,
        golds_correct=stats.golds_correct + (1 if correct else 0),
    )
    action = GoldAction.NONE
    if updated.golds_seen >= cfg.min_golds_before_judgement:
        assert updated.accuracy is not None
        if updated.accuracy < cfg.min_accuracy:
            action = GoldAction.SOFT_BLOCK
    return updated, action


def score_gold(
    outputs: Any, expected: Any, comparator: Callable[[Any, Any], bool] | None = None
) -> bool:
    """Exact-match unless a custom comparator was registered at launch."""
    if comparator is not None:
        return bool(comparator(outputs, expected))
    return outputs == expected


def load_gold_stats(store: "LocalStore", worker: "Worker", cfg: GoldConfig) -> WorkerGoldStats:
    values = {}
    for name in _GOLD_STAT_FIELDS:
        granted = store.get_granted_value(worker.id, f"{cfg.gold_qualification_name}__{name}")
        values[name] = granted if granted is not None else 0
    return WorkerGoldStats(
        worker_id=worker.id,
        golds_seen=values["seen"],
        golds_correct=values["correct"],
        units_since_last_gold=values["streak"],
    )


def save_gold_stats(
    store: "LocalStore", worker: "Worker", cfg: GoldConfig, stats: WorkerGoldStats
) -> None:
    prefix = cfg.gold_qualification_name
    store.grant_qualification(worker.id, f"{prefix}__seen", stats.golds_seen)
    store.grant_qualification(worker.id, f"{prefix}__correct", stats.golds_correct)
    store.grant_qualification(worker.id, f"{prefix}__streak", stats.units_since_last_gold)


def screening_gate(
    store: "LocalStore",
    worker: "Worker",
    cfg: ScreeningConfig,
    budget_remaining: int,
) -> ScreeningDecision:
    """Route an unscreened worker to a screening unit while budget lasts.

    The caller owns the budget counter and decrements it when it enacts a
    GIVE_SCREENING_UNIT decision.
    """
    if store.get_granted_value(worker.id, cfg.passed_qualification_name) is not None:
        return ScreeningDecision(ScreeningOutcome.ALREADY_PASSED)
    if store.get_granted_value(worker.id, cfg.blocked_qualification_name) is not None:
        return ScreeningDecision(ScreeningOutcome.BLOCKED)
    if budget_remaining <= 0:
        return ScreeningDecision(ScreeningOutcome.BUDGET_EXHAUSTED)
    issued = cfg.max_screening_units - budget_remaining
    index = issued % len(cfg.screening_items)
    return ScreeningDecision(
        ScreeningOutcome.GIVE_SCREENING_UNIT,
        item=cfg.screening_items[index],
        item_index=index,
    )


def score_screening(
    store: "LocalStore", worker: "Worker", cfg: ScreeningConfig, submission: Any
) -> bool:
    """Score the screening submission and grant the pass/block qualification."""
    passed = True if cfg.screening_validator is None else bool(cfg.screening_validator(submission))
    name = cfg.passed_qualification_name if passed else cfg.blocked_qualification_name
    store.grant_qualification(worker.id, name, 1)
    return passed


def task_failure_qualifications(
    onboarding: OnboardingConfig | None,
    gold: GoldConfig | None,
    screening: ScreeningConfig | None,
) -> list[str]:
    """Qualification names whose presence makes a worker ineligible for this
    task's units."""
    names: list[str] = []
    if onboarding is not None:
        names.append(onboarding.failed_qualification_name)
    if gold is not None:
        names.append(gold.failed_qualification_name)
    if screening is not None:
        names.append(screening.blocked_qualification_name)
    return names
