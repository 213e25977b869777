"""Run coordination: wires one blueprint + architect + provider + store into
a live run and owns launch, eligibility, assignment, monitoring, and
shutdown.

Concurrency layout: the architect's connection threads feed a single
inbound packet queue; one packet thread per run consumes it in order.
Eligibility plus agent creation is a critical section, so no two live
agents ever share a unit. Each live agent gets a runner thread executing
the blueprint's TaskRunner; a monitor thread ticks heartbeats, partial
saves, and metrics snapshots.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from websockets.sync.client import connect as ws_connect

from . import quality, worker_ops
from .architects import Architect, HeartbeatVerdict, get_architect_factory, heartbeat_monitor
from .blueprints import (
    BlueprintDefinition,
    SharedTaskState,
    TaskRunner,
    build_task,
    get_blueprint,
    get_init_data,
    handle_remote_procedure,
    validate_submission,
)
from .channel import (
    ACT_FEEDBACK,
    ACT_PARTIAL_SAVE,
    ACT_RETURN_UNIT,
    ACT_TIP,
    ChannelPacket,
    PacketType,
    decode_packet,
    make_packet,
    view_flags,
)
from .config import dig
from .entities import (
    AGENT_ACTIVE,
    AgentStatus,
    TaskRun,
    Unit,
    UnitKind,
    UnitStatus,
    Worker,
    build_assignment_structure,
)
from .errors import (
    BuildError,
    ConfigError,
    DeployError,
    HandlerError,
    TaskforgeError,
    UnknownProcedure,
)
from .providers import CrowdProvider, get_provider_factory
from .quality import (
    GoldAction,
    GoldConfig,
    OnboardingConfig,
    OnboardingDecision,
    ScreeningConfig,
    ScreeningOutcome,
)
from .store import AgentStatePayload, LocalStore
from .worker_ops import Comparator, QualificationRequirement, check_requirements

logger = logging.getLogger(__name__)

# Agent statuses that do not count against a worker's unit quota: the
# attempt was abandoned, not worked to completion.
_ABANDONED = frozenset({AgentStatus.DISCONNECTED, AgentStatus.TIMEOUT, AgentStatus.RETURNED})


class RunPhase(str, Enum):
    PREPARING = "preparing"
    RUNNING = "running"
    DRAINING = "draining"
    SHUTDOWN = "shutdown"


_PHASE_ORDER = [RunPhase.PREPARING, RunPhase.RUNNING, RunPhase.DRAINING, RunPhase.SHUTDOWN]


@dataclass(frozen=True)
class RunConfig:
    """Validated view of the resolved config tree."""

    task_name: str
    title: str
    description: str
    tags: tuple[str, ...]
    task_type: str
    architect_type: str
    provider_type: str
    pay_amount: Decimal
    units_per_assignment: int
    maximum_units_per_worker: int
    assignment_duration: float
    allowed_concurrent_per_worker: int
    qualifications: tuple[QualificationRequirement, ...]
    heartbeat_interval: float
    heartbeat_timeout: float
    monitor_interval: float
    port: int
    tips_enabled: bool
    feedback_enabled: bool
    tree: dict[str, Any] = field(repr=False, hash=False, compare=False, default_factory=dict)

    @classmethod
    def from_tree(cls, tree: dict[str, Any]) -> "RunConfig":
        def require(key: str, predicate: Callable[[Any], bool], message: str) -> Any:
            value = dig(tree, key)
            if not predicate(value):
                raise ConfigError(f"config key {key!r} {message} (got {value!r})", key=key)
            return value

        units_per = require(
            "task.units_per_assignment", lambda v: isinstance(v, int) and v >= 1, "must be >= 1"
        )
        pay = Decimal(str(require(
            "task.pay_amount", lambda v: isinstance(v, (int, float)) and v >= 0, "must be >= 0"
        )))
        max_units = require(
            "task.maximum_units_per_worker",
            lambda v: isinstance(v, int) and v >= 0,
            "must be >= 0 (0 = unlimited)",
        )
        concurrent = require(
            "task.allowed_concurrent_per_worker",
            lambda v: isinstance(v, int) and v >= 1,
            "must be >= 1",
        )
        duration = require(
            "task.assignment_duration",
            lambda v: isinstance(v, (int, float)) and v > 0,
            "must be > 0",
        )
        requirements = []
        for i, spec in enumerate(dig(tree, "task.qualifications") or []):
            try:
                comparator = Comparator(spec["comparator"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(
                    f"task.qualifications[{i}] has an invalid comparator",
                    key="task.qualifications",
                ) from exc
            requirements.append(
                QualificationRequirement(spec["name"], comparator, spec.get("value"))
            )
        return cls(
            task_name=str(dig(tree, "task.name")),
            title=str(dig(tree, "task.title")),
            description=str(dig(tree, "task.description") or ""),
            tags=tuple(dig(tree, "task.tags") or ()),
            task_type=str(dig(tree, "task.task_type")),
            architect_type=str(dig(tree, "architect.type")),
            provider_type=str(dig(tree, "provider.type")),
            pay_amount=pay,
            units_per_assignment=units_per,
            maximum_units_per_worker=max_units,
            assignment_duration=float(duration),
            allowed_concurrent_per_worker=concurrent,
            qualifications=tuple(requirements),
            heartbeat_interval=float(dig(tree, "architect.heartbeat_interval", 5.0)),
            heartbeat_timeout=float(dig(tree, "architect.heartbeat_timeout", 30.0)),
            monitor_interval=float(dig(tree, "architect.monitor_interval", 1.0)),
            port=int(dig(tree, "architect.port", 0) or 0),
            tips_enabled=bool(dig(tree, "task.tips_enabled", False)),
            feedback_enabled=bool(dig(tree, "task.feedback_enabled", False)),
            tree=tree,
        )

    def build_onboarding(self) -> OnboardingConfig | None:
        if not dig(self.tree, "mixins.onboarding.enabled", False):
            return None
        return OnboardingConfig(
            onboarding_qualification_name=str(dig(self.tree, "mixins.onboarding.qualification_name")),
            onboarding_payload=dig(self.tree, "mixins.onboarding.payload"),
        )

    def build_gold(self) -> GoldConfig | None:
        if not dig(self.tree, "mixins.gold.enabled", False):
            return None
        items = tuple(
            (item["payload"], item.get("answer")) for item in dig(self.tree, "mixins.gold.items") or []
        )
        return GoldConfig(
            gold_items=items,
            gold_qualification_name=str(dig(self.tree, "mixins.gold.qualification_name")),
            gold_rate=float(dig(self.tree, "mixins.gold.rate", 0.2)),
            min_golds_before_judgement=int(dig(self.tree, "mixins.gold.min_golds_before_judgement", 3)),
            min_accuracy=float(dig(self.tree, "mixins.gold.min_accuracy", 0.7)),
        )

    def build_screening(
        self, n_assignments: int, shared: SharedTaskState
    ) -> ScreeningConfig | None:
        if not dig(self.tree, "mixins.screening.enabled", False):
            return None
        raw_budget = int(dig(self.tree, "mixins.screening.max_units", -1))
        budget = raw_budget if raw_budget >= 0 else 3 * n_assignments
        return ScreeningConfig(
            screening_items=tuple(dig(self.tree, "mixins.screening.items") or ()),
            screening_validator=shared.screening_validator,
            max_screening_units=budget,
            passed_qualification_name=str(
                dig(self.tree, "mixins.screening.passed_qualification_name")
            ),
            blocked_qualification_name=str(
                dig(self.tree, "mixins.screening.blocked_qualification_name")
            ),
        )


class Counters:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.units_launched = 0
        self.units_completed = 0
        self.units_expired = 0
        self.agents_active = 0

    def bump(self, **deltas: int) -> None:
        with self._lock:
            for name, delta in deltas.items():
                setattr(self, name, getattr(self, name) + delta)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {
                "units_launched": self.units_launched,
                "units_completed": self.units_completed,
                "units_expired": self.units_expired,
                "agents_active": self.agents_active,
            }


@dataclass(frozen=True)
class MonitorAction:
    kind: str  # "disconnect" | "relaunch"
    target_id: str

    def __str__(self) -> str:
        return f"{self.kind.upper()}({self.target_id})"


class AgentHandle:
    """Live state for one agent: the runner thread blocks on it, the packet
    and monitor threads signal it."""

    def __init__(
        self,
        live: "LiveRun",
        agent_id: str,
        worker: Worker,
        unit: Unit,
        conn_id: str,
        inputs: Any,
        now: float,
    ) -> None:
        self.live = live
        self.agent_id = agent_id
        self.worker = worker
        self.unit = unit
        self.conn_id = conn_id
        self.inputs = inputs
        self.last_seen = now
        self.task_start = int(time.time() * 1000)
        self._cond = threading.Condition()
        self._result: tuple[str, Any] | None = None
        self._state_lock = threading.Lock()
        self._pending_partial: Any = None
        self._finalized = False
        self.thread: threading.Thread | None = None

    # -- signalled by packet/monitor threads --------------------------------

    def signal(self, cause: str, payload: Any = None) -> None:
        with self._cond:
            if self._result is None:
                self._result = (cause, payload)
                self._cond.notify_all()

    def heartbeat(self, now: float) -> None:
        self.last_seen = now

    def stash_partial(self, outputs: Any) -> None:
        with self._state_lock:
            self._pending_partial = outputs

    def flush_partial(self) -> None:
        with self._state_lock:
            if self._finalized or self._pending_partial is None:
                return
            payload = AgentStatePayload(
                inputs=self.inputs,
                outputs=self._pending_partial,
                times={"task_start": self.task_start, "task_end": None},
            )
            self.live.store.save_agent_state(self.agent_id, payload, partial=True)
            self._pending_partial = None

    # -- consumed by the runner thread ---------------------------------------

    def await_outcome(self, timeout: float) -> tuple[str, Any]:
        deadline = time.monotonic() + timeout
        with self._cond:
            while self._result is None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return ("timeout", None)
                self._cond.wait(remaining)
            return self._result

    def finalize_submission(self, outputs: Any) -> None:
        """Durably save the final payload, then update statuses, then ack."""
        with self._state_lock:
            payload = AgentStatePayload(
                inputs=self.inputs,
                outputs=outputs,
                times={"task_start": self.task_start, "task_end": int(time.time() * 1000)},
            )
            self.live.store.save_agent_state(self.agent_id, payload, partial=False)
            self._finalized = True
            self._pending_partial = None
        store = self.live.store
        with self.live.accounting:
            store.update_unit_status(self.unit.id, UnitStatus.COMPLETED)
            store.update_agent_status(self.agent_id, AgentStatus.SUBMITTED)
            self.live.counters.bump(units_completed=1, agents_active=-1)
        self.live.release_handle(self)
        # QA scoring must land before the ack so a follow-up registration
        # sees the gates' verdict.
        self.live.on_unit_complete(self, outputs)
        self.live.send(
            self.conn_id,
            make_packet(
                PacketType.UPDATE_STATUS,
                self.agent_id,
                {"status": "submitted", "view_flags": view_flags("show_submitted")},
            ),
        )

    def abandon(self, cause: str) -> None:
        """The agent ends without a submission; free or retire the unit."""
        self.flush_partial()
        status_map = {
            "disconnect": AgentStatus.DISCONNECTED,
            "timeout": AgentStatus.TIMEOUT,
            "return": AgentStatus.RETURNED,
            "expire": AgentStatus.DISCONNECTED,
        }
        store = self.live.store
        expire = (
            cause == "expire"
            or self.live.phase is not RunPhase.RUNNING
            or self.unit.unit_kind is not UnitKind.REAL
        )
        with self.live.accounting:
            store.update_agent_status(
                self.agent_id, status_map.get(cause, AgentStatus.DISCONNECTED)
            )
            if expire:
                store.update_unit_status(self.unit.id, UnitStatus.EXPIRED)
                self.live.counters.bump(units_expired=1, agents_active=-1)
            else:
                store.update_unit_status(self.unit.id, UnitStatus.LAUNCHED)
                self.live.counters.bump(agents_active=-1)
        self.live.release_handle(self)
        self.live.send(
            self.conn_id,
            make_packet(
                PacketType.UPDATE_STATUS,
                self.agent_id,
                {"status": cause, "view_flags": view_flags("show_preview")},
            ),
        )
        self.live.check_completion()


def find_eligible_unit(
    store: LocalStore,
    worker: Worker,
    run_id: str,
    config: RunConfig,
    shared: SharedTaskState | None = None,
    failure_qualifications: tuple[str, ...] = (),
    requested_unit_id: str | None = None,
) -> Unit | None:
    """Pick the unit this worker may work on, or None.

    All of these must hold: (a) configured qualification requirements pass;
    (b) worker is not blocked and holds no task-scoped failure
    qualification; (c) the worker has never had an agent on the candidate's
    assignment; (d) the worker's completed+active unit count in this run is
    under maximum_units_per_worker when set; (e) live agents are under
    allowed_concurrent_per_worker; (f) the shared eligibility hook passes.
    Tie-break: lowest (assignment creation time, unit_index).
    """
    if worker.is_blocked:
        return None
    for name in failure_qualifications:
        if store.get_granted_value(worker.id, name) is not None:
            return None
    if not check_requirements(store, worker, list(config.qualifications)):
        return None
    agents = store.find_records("agent", worker_id=worker.id, task_run_id=run_id)
    if config.maximum_units_per_worker > 0:
        counted = [a for a in agents if a.status not in _ABANDONED]
        if len(counted) >= config.maximum_units_per_worker:
            return None
    active = [a for a in agents if a.status in AGENT_ACTIVE]
    if len(active) >= config.allowed_concurrent_per_worker:
        return None
    if shared is not None and shared.worker_eligibility_hook is not None:
        if not shared.worker_eligibility_hook(worker):
            return None

    touched_assignments = {store.get_unit(a.unit_id).assignment_id for a in agents}
    candidates = [
        unit
        for unit in store.find_records("unit", task_run_id=run_id, status=UnitStatus.LAUNCHED)
        if unit.unit_kind is UnitKind.REAL and unit.assignment_id not in touched_assignments
    ]
    if not candidates:
        return None
    if requested_unit_id is not None:
        requested = [u for u in candidates if u.id == requested_unit_id]
        return requested[0] if requested else None
    assignment_created = {
        a.id: a.created_at for a in store.find_records("assignment", task_run_id=run_id)
    }
    return min(candidates, key=lambda u: (assignment_created[u.assignment_id], u.unit_index))


class LiveRun:
    """Internal state of one launched run."""

    def __init__(
        self,
        store: LocalStore,
        config: RunConfig,
        shared: SharedTaskState,
        run: TaskRun,
        provider: CrowdProvider,
        blueprint: BlueprintDefinition,
        clock: Callable[[], float] | None = None,
    ) -> None:
        self.store = store
        self.config = config
        self.shared = shared
        self.run = run
        self.provider = provider
        self.blueprint = blueprint
        self.clock: Callable[[], float] = clock or time.monotonic
        self.counters = Counters()
        self.phase = RunPhase.PREPARING
        self._phase_lock = threading.Lock()
        self.architect: Architect | None = None
        self.url: str | None = None
        self.runner: TaskRunner = blueprint.runner_factory(config.assignment_duration, shared)

        self.onboarding = config.build_onboarding()
        self.gold = config.build_gold()
        self.screening: ScreeningConfig | None = None  # built at launch (budget needs counts)
        self.screening_budget = 0
        self.failure_qualifications: tuple[str, ...] = ()

        self.inbound: "queue.Queue[tuple[str, ChannelPacket]]" = queue.Queue()
        self.handles: dict[str, AgentHandle] = {}
        self.conn_agents: dict[str, str] = {}
        self.onboarding_conns: dict[str, str] = {}
        self.assign_lock = threading.RLock()
        # held around any paired unit-status + counter change so conservation
        # is observable at every instant
        self.accounting = threading.RLock()
        self.handles_lock = threading.Lock()
        self.stop_event = threading.Event()
        self.completion_event = threading.Event()
        self.packet_thread: threading.Thread | None = None
        self.monitor_thread: threading.Thread | None = None
        self.runner_threads: list[threading.Thread] = []
        self.metrics_path: Path = store.data_root / "runs" / run.id / "metrics.jsonl"
        self._summary: dict[str, Any] | None = None

    # -- phase -----------------------------------------------------------------

    def set_phase(self, phase: RunPhase) -> None:
        with self._phase_lock:
            if _PHASE_ORDER.index(phase) < _PHASE_ORDER.index(self.phase):
                raise TaskforgeError(f"phase cannot move back from {self.phase} to {phase}")
            self.phase = phase

    # -- plumbing ----------------------------------------------------------------

    def send(self, conn_id: str, packet: ChannelPacket) -> None:
        if self.architect is not None:
            self.architect.send(conn_id, packet)

    def on_packet(self, conn_id: str, packet: ChannelPacket) -> None:
        self.inbound.put((conn_id, packet))

    def on_disconnect(self, conn_id: str) -> None:
        self.onboarding_conns.pop(conn_id, None)
        agent_id = self.conn_agents.pop(conn_id, None)
        if agent_id is not None:
            with self.handles_lock:
                handle = self.handles.get(agent_id)
            if handle is not None:
                handle.signal("disconnect")

    def release_handle(self, handle: AgentHandle) -> None:
        with self.handles_lock:
            self.handles.pop(handle.agent_id, None)
        if self.conn_agents.get(handle.conn_id) == handle.agent_id:
            self.conn_agents.pop(handle.conn_id, None)

    def live_handles(self) -> list[AgentHandle]:
        with self.handles_lock:
            return list(self.handles.values())

    # -- packet loop ----------------------------------------------------------------

    def _packet_loop(self) -> None:
        while not self.stop_event.is_set():
            try:
                conn_id, packet = self.inbound.get(timeout=0.05)
            except queue.Empty:
                continue
            try:
                self._dispatch(conn_id, packet)
            except Exception:
                logger.exception("error handling %s packet", packet.packet_type.value)

    def _dispatch(self, conn_id: str, packet: ChannelPacket) -> None:
        if packet.packet_type is PacketType.ALIVE:
            self.send(conn_id, make_packet(PacketType.ALIVE, packet.subject_id, {"ok": True}))
        elif packet.packet_type is PacketType.HEARTBEAT:
            self._handle_heartbeat(conn_id, packet)
        elif packet.packet_type is PacketType.REGISTER_AGENT:
            self._handle_register(conn_id, packet)
        elif packet.packet_type is PacketType.SUBMIT_ONBOARDING:
            self._handle_onboarding_submit(conn_id, packet)
        elif packet.packet_type is PacketType.SUBMIT_UNIT:
            self._handle_submit(conn_id, packet)
        elif packet.packet_type is PacketType.ACT:
            self._handle_act(conn_id, packet)
        elif packet.packet_type is PacketType.RP_REQUEST:
            self._handle_rp(conn_id, packet)
        elif packet.packet_type is PacketType.ERROR_LOG:
            logger.warning("client error report: %s", packet.payload)

    def _handle_heartbeat(self, conn_id: str, packet: ChannelPacket) -> None:
        handle = self._handle_for(packet.subject_id, conn_id)
        if handle is not None:
            handle.heartbeat(self.clock())
        self.send(conn_id, make_packet(PacketType.HEARTBEAT, packet.subject_id, {"ok": True}))

    def _handle_for(self, agent_id: str, conn_id: str) -> AgentHandle | None:
        with self.handles_lock:
            if agent_id and agent_id in self.handles:
                return self.handles[agent_id]
            mapped = self.conn_agents.get(conn_id)
            return self.handles.get(mapped) if mapped else None

    def _refuse(self, conn_id: str, flag: str, reason: str) -> None:
        self.send(
            conn_id,
            make_packet(
                PacketType.AGENT_DETAILS,
                "",
                {
                    "agent_id": None,
                    "init_data": None,
                    "unit_id": None,
                    "unit_kind": None,
                    "view_flags": view_flags(flag),
                    "reason": reason,
                },
            ),
        )

    def _worker_blocked_reason(self, worker: Worker) -> str | None:
        if worker.is_blocked:
            return "blocked_by_provider"
        for name in self.failure_qualifications:
            if self.store.get_granted_value(worker.id, name) is not None:
                return f"disqualified:{name}"
        return None

    def _handle_register(self, conn_id: str, packet: ChannelPacket) -> None:
        payload = packet.payload or {}
        worker_name = payload.get("worker_name")
        if not worker_name:
            self.send(
                conn_id,
                make_packet(PacketType.ERROR_LOG, "", {"error": "register requires worker_name"}),
            )
            return
        if self.phase is not RunPhase.RUNNING:
            self._refuse(conn_id, "show_preview", "run_not_accepting_work")
            return
        worker = self.store.ensure_worker(worker_name, self.config.provider_type)
        blocked_reason = self._worker_blocked_reason(worker)
        if blocked_reason is not None:
            self._refuse(conn_id, "blocked", blocked_reason)
            return
        if self.onboarding is not None:
            decision = quality.onboarding_gate(
                self.store, worker, self.onboarding, self.shared.onboarding_validator
            )
            if decision is OnboardingDecision.FAILED:
                self._refuse(conn_id, "blocked", "onboarding_failed")
                return
            if decision is OnboardingDecision.NEEDS_ONBOARDING:
                self.onboarding_conns[conn_id] = worker.id
                self.send(
                    conn_id,
                    make_packet(
                        PacketType.AGENT_DETAILS,
                        "",
                        {
                            "agent_id": None,
                            "init_data": self.onboarding.onboarding_payload,
                            "unit_id": None,
                            "unit_kind": None,
                            "view_flags": view_flags("show_onboarding"),
                            "reason": None,
                        },
                    ),
                )
                return
        self._assign_and_reply(conn_id, worker, payload.get("requested_unit_id"))

    def _handle_onboarding_submit(self, conn_id: str, packet: ChannelPacket) -> None:
        if self.onboarding is None:
            self.send(
                conn_id,
                make_packet(PacketType.ERROR_LOG, "", {"error": "onboarding is not enabled"}),
            )
            return
        worker_id = self.onboarding_conns.pop(conn_id, None)
        if worker_id is None:
            worker_name = (packet.payload or {}).get("worker_name")
            if not worker_name:
                self.send(
                    conn_id,
                    make_packet(
                        PacketType.ERROR_LOG, "", {"error": "no onboarding session for connection"}
                    ),
                )
                return
            worker_id = self.store.ensure_worker(worker_name, self.config.provider_type).id
        worker = self.store.get_worker(worker_id)
        answers = (packet.payload or {}).get("answers")
        decision = quality.onboarding_gate(
            self.store, worker, self.onboarding, self.shared.onboarding_validator, answers
        )
        if decision is OnboardingDecision.PASSED:
            self._assign_and_reply(conn_id, worker, None)
        else:
            self._refuse(conn_id, "blocked", "onboarding_failed")

    def _assign_and_reply(self, conn_id: str, worker: Worker, requested_unit_id: str | None) -> None:
        with self.assign_lock:
            if self.phase is not RunPhase.RUNNING:
                self._refuse(conn_id, "show_preview", "run_not_accepting_work")
                return
            candidate = find_eligible_unit(
                self.store,
                worker,
                self.run.id,
                self.config,
                self.shared,
                self.failure_qualifications,
                requested_unit_id,
            )
            if candidate is None:
                self._refuse(conn_id, "show_preview", "no_units_available")
                return
            unit = self._apply_mixins(conn_id, worker, candidate)
            if unit is None:
                return  # refusal already sent
            self.store.update_unit_status(unit.id, UnitStatus.ASSIGNED)
            unit = self.store.get_unit(unit.id)
            agent_id = self.store.create_record(
                "agent", {"worker_id": worker.id, "unit_id": unit.id}
            )
            self.store.update_agent_status(agent_id, AgentStatus.IN_TASK)
            init_data = get_init_data(self.store, unit)
            handle = AgentHandle(self, agent_id, worker, unit, conn_id, init_data, self.clock())
            with self.handles_lock:
                self.handles[agent_id] = handle
            self.conn_agents[conn_id] = agent_id
            self.counters.bump(agents_active=1)
        details: dict[str, Any] = {
            "agent_id": agent_id,
            "init_data": init_data,
            "unit_id": unit.id,
            "unit_kind": unit.unit_kind.value,
            "view_flags": view_flags("show_task"),
            "reason": None,
        }
        if self.config.tips_enabled:
            details["tips"] = worker_ops.tips_payload(self.store, self.run.task_id)
        self.send(conn_id, make_packet(PacketType.AGENT_DETAILS, agent_id, details))
        thread = threading.Thread(
            target=self._run_agent, args=(handle,), name=f"runner-{agent_id}", daemon=True
        )
        handle.thread = thread
        self.runner_threads.append(thread)
        thread.start()

    def _apply_mixins(self, conn_id: str, worker: Worker, candidate: Unit) -> Unit | None:
        """Screening and gold may substitute a QA unit for the picked one."""
        if self.screening is not None:
            decision = quality.screening_gate(
                self.store, worker, self.screening, self.screening_budget
            )
            if decision.outcome is ScreeningOutcome.BLOCKED:
                self._refuse(conn_id, "blocked", "screening_failed")
                return None
            if decision.outcome is ScreeningOutcome.BUDGET_EXHAUSTED:
                self._refuse(conn_id, "show_preview", "screening_budget_exhausted")
                return None
            if decision.outcome is ScreeningOutcome.GIVE_SCREENING_UNIT:
                self.screening_budget -= 1
                return self._mint_qa_unit(UnitKind.SCREENING, decision.item, decision.item_index)
        if self.gold is not None:
            stats = quality.load_gold_stats(self.store, worker, self.gold)
            stats = quality.WorkerGoldStats(
                worker_id=stats.worker_id,
                golds_seen=stats.golds_seen,
                golds_correct=stats.golds_correct,
                units_since_last_gold=stats.units_since_last_gold + 1,
            )
            if quality.next_unit_kind(stats, self.gold) is UnitKind.GOLD:
                index, payload, _expected = quality.gold_item_for(stats, self.gold)
                stats = quality.WorkerGoldStats(
                    worker_id=stats.worker_id,
                    golds_seen=stats.golds_seen,
                    golds_correct=stats.golds_correct,
                    units_since_last_gold=0,
                )
                quality.save_gold_stats(self.store, worker, self.gold, stats)
                return self._mint_qa_unit(UnitKind.GOLD, payload, index)
            quality.save_gold_stats(self.store, worker, self.gold, stats)
        return candidate

    def _mint_qa_unit(self, kind: UnitKind, item: Any, qa_index: int | None) -> Unit:
        """QA units get their own single-unit assignment holding the QA item,
        so init data stays a pass-through."""
        with self.store.transaction():
            assignment_id = self.store.create_record(
                "assignment", {"task_run_id": self.run.id, "input_item": item}
            )
            unit_id = self.store.create_record(
                "unit",
                {
                    "assignment_id": assignment_id,
                    "unit_index": 0,
                    "pay_amount": self.config.pay_amount,
                    "unit_kind": kind,
                    "qa_index": qa_index,
                },
            )
        unit = self.store.get_unit(unit_id)
        with self.accounting:
            self.provider.register_unit(unit)
            self.counters.bump(units_launched=1)
        return self.store.get_unit(unit_id)

    def _run_agent(self, handle: AgentHandle) -> None:
        try:
            self.runner.run_unit(handle)
        except Exception:
            logger.exception("runner crashed for agent %s", handle.agent_id)

    def _handle_submit(self, conn_id: str, packet: ChannelPacket) -> None:
        handle = self._handle_for(packet.subject_id, conn_id)
        if handle is None:
            self.send(
                conn_id,
                make_packet(
                    PacketType.ERROR_LOG,
                    packet.subject_id,
                    {"error": f"no live agent {packet.subject_id!r} to submit for"},
                ),
            )
            return
        if not validate_submission(self.shared, packet.payload):
            logger.warning("submission for agent %s failed the validator", handle.agent_id)
        handle.signal("submit", packet.payload)

    def _handle_act(self, conn_id: str, packet: ChannelPacket) -> None:
        handle = self._handle_for(packet.subject_id, conn_id)
        payload = packet.payload or {}
        act_type = payload.get("type")
        data = payload.get("data")
        if handle is None:
            self.send(
                conn_id,
                make_packet(
                    PacketType.ERROR_LOG, packet.subject_id, {"error": "no live agent for act"}
                ),
            )
            return
        if act_type == ACT_PARTIAL_SAVE:
            handle.stash_partial(data)
        elif act_type == ACT_RETURN_UNIT:
            handle.signal("return")
        elif act_type == ACT_FEEDBACK:
            entry = worker_ops.submit_feedback(
                self.store, handle.agent_id, (data or {}).get("text", ""), (data or {}).get("category")
            )
            self.send(
                conn_id,
                make_packet(
                    PacketType.UPDATE_STATUS,
                    handle.agent_id,
                    {"act_ack": ACT_FEEDBACK, "feedback_id": entry.id},
                ),
            )
        elif act_type == ACT_TIP:
            entry = worker_ops.submit_tip(
                self.store, handle.agent_id, (data or {}).get("header", ""), (data or {}).get("body", "")
            )
            self.send(
                conn_id,
                make_packet(
                    PacketType.UPDATE_STATUS,
                    handle.agent_id,
                    {"act_ack": ACT_TIP, "tip_id": entry.id},
                ),
            )
        else:
            logger.info("unrecognized act type %r from agent %s", act_type, handle.agent_id)

    def _handle_rp(self, conn_id: str, packet: ChannelPacket) -> None:
        payload = packet.payload or {}
        name = payload.get("procedure", "")
        args = payload.get("args")
        agent_id = payload.get("agent_id") or self.conn_agents.get(conn_id, "")
        try:
            if not self.blueprint.supports_remote_procedures:
                raise UnknownProcedure("this blueprint has no remote procedures")
            handle = self._handle_for(agent_id, conn_id)
            if handle is None:
                raise HandlerError(f"agent {agent_id!r} is not in a live task")
            result = handle_remote_procedure(self.shared, name, args, agent_id)
            response: dict[str, Any] = {"ok": True, "result": result}
        except UnknownProcedure as exc:
            response = {"ok": False, "error": {"type": "unknown_procedure", "message": str(exc)}}
        except HandlerError as exc:
            response = {"ok": False, "error": {"type": "handler_error", "message": str(exc)}}
        self.send(conn_id, make_packet(PacketType.RP_RESPONSE, packet.subject_id, response))

    # -- QA scoring after completion ------------------------------------------------

    def on_unit_complete(self, handle: AgentHandle, outputs: Any) -> None:
        unit = handle.unit
        if unit.unit_kind is UnitKind.GOLD and self.gold is not None:
            expected = self.gold.gold_items[unit.qa_index or 0][1]
            correct = quality.score_gold(outputs, expected, self.shared.gold_comparator)
            stats = quality.load_gold_stats(self.store, handle.worker, self.gold)
            stats, action = quality.record_gold_result(stats, correct, self.gold)
            quality.save_gold_stats(self.store, handle.worker, self.gold, stats)
            if action is GoldAction.SOFT_BLOCK:
                self.store.grant_qualification(
                    handle.worker.id, self.gold.failed_qualification_name, 1
                )
        elif unit.unit_kind is UnitKind.SCREENING and self.screening is not None:
            quality.score_screening(self.store, handle.worker, self.screening, outputs)
        self.check_completion()

    def check_completion(self) -> None:
        live = {UnitStatus.CREATED, UnitStatus.LAUNCHED, UnitStatus.ASSIGNED}
        units = self.store.find_records("unit", task_run_id=self.run.id)
        if units and not any(u.status in live for u in units):
            self.completion_event.set()

    # -- monitoring --------------------------------------------------------------

    def monitor_tick(self, now: float | None = None) -> list[MonitorAction]:
        now = self.clock() if now is None else now
        actions: list[MonitorAction] = []
        for handle in self.live_handles():
            verdict = heartbeat_monitor(handle.last_seen, now, self.config.heartbeat_timeout)
            if verdict is HeartbeatVerdict.TIMEOUT:
                actions.append(MonitorAction("disconnect", handle.agent_id))
                actions.append(MonitorAction("relaunch", handle.unit.id))
                handle.signal("disconnect")
            try:
                handle.flush_partial()
            except Exception:
                logger.exception("partial flush failed for agent %s", handle.agent_id)
        self._write_snapshot()
        return actions

    def unit_status_histogram(self) -> dict[str, int]:
        histogram = {status.value: 0 for status in UnitStatus}
        for unit in self.store.find_records("unit", task_run_id=self.run.id):
            histogram[unit.status.value] += 1
        return histogram

    def _write_snapshot(self) -> None:
        snapshot = {
            "timestamp": int(time.time() * 1000),
            "counters": self.counters.snapshot(),
            "unit_status_histogram": self.unit_status_histogram(),
        }
        self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.metrics_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(snapshot, ensure_ascii=False) + "\n")

    def _monitor_loop(self) -> None:
        while not self.stop_event.wait(self.config.monitor_interval):
            try:
                self.monitor_tick()
            except Exception:
                logger.exception("monitor tick failed")

    # -- shutdown ---------------------------------------------------------------

    def shutdown(self, force: bool = False) -> dict[str, Any]:
        if self.phase is RunPhase.SHUTDOWN:
            return self._summary or {"counters": self.counters.snapshot()}
        if self.phase is not RunPhase.DRAINING:
            self.set_phase(RunPhase.DRAINING)
        if force:
            for handle in self.live_handles():
                handle.flush_partial()
                handle.signal("expire")
        else:
            deadline = time.monotonic() + self.config.assignment_duration
            while self.live_handles() and time.monotonic() < deadline:
                time.sleep(0.02)
            for handle in self.live_handles():
                handle.signal("expire")
        for thread in self.runner_threads:
            thread.join(timeout=5)
        # retire whatever never got worked on
        for unit in self.store.find_records("unit", task_run_id=self.run.id):
            with self.accounting:
                if unit.status is UnitStatus.CREATED:
                    self.store.update_unit_status(unit.id, UnitStatus.LAUNCHED)
                    self.store.update_unit_status(unit.id, UnitStatus.EXPIRED)
                    self.counters.bump(units_expired=1)
                elif unit.status in (UnitStatus.LAUNCHED, UnitStatus.ASSIGNED):
                    self.provider.expire_unit(unit)
                    self.counters.bump(units_expired=1)
        self.stop_event.set()
        if self.packet_thread is not None:
            self.packet_thread.join(timeout=5)
        if self.monitor_thread is not None:
            self.monitor_thread.join(timeout=5)
        if self.architect is not None:
            self.architect.shutdown()
        self.store.mark_run_completed(self.run.id)
        self.set_phase(RunPhase.SHUTDOWN)
        self.completion_event.set()
        self._write_snapshot()
        self._summary = {
            "task_run_id": self.run.id,
            "counters": self.counters.snapshot(),
            "unit_status_histogram": self.unit_status_histogram(),
        }
        return self._summary


class LiveRunHandle:
    """What callers hold: counters, phase, and the deployed URL."""

    def __init__(self, live: LiveRun) -> None:
        self._live = live

    @property
    def task_run_id(self) -> str:
        return self._live.run.id

    @property
    def url(self) -> str | None:
        return self._live.url

    @property
    def phase(self) -> RunPhase:
        return self._live.phase

    @property
    def counters(self) -> dict[str, int]:
        return self._live.counters.snapshot()

    @property
    def channel_url(self) -> str:
        assert self._live.url is not None
        return self._live.url.replace("http://", "ws://") + "/channel"

    def wait_for_completion(self, timeout: float | None = None) -> bool:
        return self._live.completion_event.wait(timeout)

    def unit_status_histogram(self) -> dict[str, int]:
        return self._live.unit_status_histogram()

    def verify_conservation(self) -> bool:
        with self._live.accounting:
            counters = self.counters
            histogram = self.unit_status_histogram()
        in_flight = histogram["launched"] + histogram["assigned"]
        return counters["units_launched"] == (
            counters["units_completed"] + counters["units_expired"] + in_flight
        )


def _expire_everything(store: LocalStore, run_id: str) -> None:
    """Rollback helper: every unit ends EXPIRED via legal edges."""
    for unit in store.find_records("unit", task_run_id=run_id):
        if unit.status is UnitStatus.CREATED:
            store.update_unit_status(unit.id, UnitStatus.LAUNCHED)
            store.update_unit_status(unit.id, UnitStatus.EXPIRED)
        elif unit.status in (UnitStatus.LAUNCHED, UnitStatus.ASSIGNED):
            store.update_unit_status(unit.id, UnitStatus.EXPIRED)


def _alive_check(channel_url: str, timeout: float = 5.0) -> None:
    with ws_connect(channel_url, open_timeout=timeout) as ws:
        ws.send(make_packet(PacketType.ALIVE, "", {}).encode())
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            message = ws.recv(timeout=max(0.01, deadline - time.monotonic()))
            if decode_packet(message).packet_type is PacketType.ALIVE:
                return
    raise DeployError("server did not answer ALIVE")


class Operator:
    """Hosts live runs; one per process is typical, many runs per operator
    are fine. Cross-run worker state (qualifications, gold stats) is shared
    through the store."""

    def __init__(self, store: LocalStore) -> None:
        self.store = store
        self.runs: dict[str, LiveRunHandle] = {}

    def launch_run(
        self,
        config_tree: dict[str, Any],
        shared: SharedTaskState | None = None,
        input_items: list[Any] | None = None,
        clock: Callable[[], float] | None = None,
    ) -> LiveRunHandle:
        shared = shared or SharedTaskState()
        stage = "config"
        live: LiveRun | None = None
        try:
            config = RunConfig.from_tree(config_tree)
            items = list(input_items if input_items is not None else dig(config_tree, "task.input_items") or [])
            if not items:
                raise ConfigError("input_items must be non-empty", key="task.input_items")
            blueprint = get_blueprint(config.task_type)
            architect_factory = get_architect_factory(config.architect_type)
            provider_factory = get_provider_factory(config.provider_type)
            shared.freeze()

            stage = "persist"
            existing = self.store.find_records("task", name=config.task_name)
            if existing:
                task = existing[0]
                if task.task_type != config.task_type:
                    raise ConfigError(
                        f"task {config.task_name!r} already exists with task_type"
                        f" {task.task_type!r}",
                        key="task.task_type",
                    )
            else:
                task_id = self.store.create_record(
                    "task", {"name": config.task_name, "task_type": config.task_type}
                )
                task = self.store.get_task(task_id)
            run_id = self.store.create_record(
                "task_run", {"task_id": task.id, "config": config_tree}
            )
            run = self.store.get_task_run(run_id)
            assignments = build_assignment_structure(
                self.store, run, items, config.units_per_assignment, config.pay_amount
            )

            provider = provider_factory(self.store)
            live = LiveRun(self.store, config, shared, run, provider, blueprint, clock)
            live.screening = config.build_screening(len(assignments), shared)
            if live.screening is not None:
                live.screening_budget = live.screening.max_screening_units
            live.failure_qualifications = tuple(
                quality.task_failure_qualifications(live.onboarding, live.gold, live.screening)
            )

            stage = "build"
            builder = blueprint.builder_factory()
            build_root = self.store.data_root / "runs" / run.id / "build"
            try:
                artifact = build_task(builder, run, build_root)
            except (ConfigError, BuildError):
                raise
            except OSError as exc:
                raise BuildError(f"build stage failed: {exc}") from exc

            stage = "deploy"
            architect = architect_factory(config_tree, live.on_packet, live.on_disconnect)
            live.architect = architect
            architect.prepare(artifact)
            live.packet_thread = threading.Thread(
                target=live._packet_loop, name=f"packets-{run.id}", daemon=True
            )
            live.packet_thread.start()
            live.url = architect.deploy()

            stage = "register"
            for assignment in assignments:
                for unit in self.store.find_records("unit", assignment_id=assignment.id):
                    with live.accounting:
                        provider.register_unit(unit)
                        live.counters.bump(units_launched=1)

            stage = "alive"
            _alive_check(live.url.replace("http://", "ws://") + "/channel")

            live.set_phase(RunPhase.RUNNING)
            live.monitor_thread = threading.Thread(
                target=live._monitor_loop, name=f"monitor-{run.id}", daemon=True
            )
            live.monitor_thread.start()
            handle = LiveRunHandle(live)
            self.runs[run.id] = handle
            return handle
        except BaseException as exc:
            if live is not None:
                live.stop_event.set()
                if live.architect is not None:
                    live.architect.shutdown()
                _expire_everything(self.store, live.run.id)
                if live.packet_thread is not None:
                    live.packet_thread.join(timeout=2)
            if not isinstance(exc, Exception):
                raise  # interrupts and the like propagate after rollback
            if isinstance(exc, ConfigError) or stage in ("config", "persist"):
                raise exc if isinstance(exc, TaskforgeError) else ConfigError(
                    f"launch failed at stage {stage}: {exc}"
                ) from exc
            if stage == "build":
                raise exc if isinstance(exc, BuildError) else BuildError(
                    f"launch failed at stage {stage}: {exc}"
                ) from exc
            raise exc if isinstance(exc, DeployError) else DeployError(
                f"launch failed at stage {stage}: {exc}"
            ) from exc

    def shutdown_run(self, handle: LiveRunHandle, force: bool = False) -> dict[str, Any]:
        return handle._live.shutdown(force)

    def monitor_tick(self, handle: LiveRunHandle, now: float | None = None) -> list[MonitorAction]:
        return handle._live.monitor_tick(now)
