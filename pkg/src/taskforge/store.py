"""Embedded persistence: the full set of database calls the framework needs,
backed by one sqlite file under data_root plus a per-agent state directory
for collected payloads and attachments.

Layout:
    data_root/store.db                                relational records
    data_root/runs/<run_id>/<agent_id>/state.json     agent state snapshots
    data_root/runs/<run_id>/<agent_id>/<attachment>   attachment files
"""

from __future__ import annotations

import abc
import json
import os
import sqlite3
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterator

from .entities import (
    LEGAL_AGENT_CHANGES,
    LEGAL_UNIT_CHANGES,
    Agent,
    AgentStatus,
    Assignment,
    Task,
    TaskRun,
    Unit,
    UnitKind,
    UnitStatus,
    Worker,
)
from .errors import (
    FinalizedStateOverwrite,
    IllegalTransition,
    NotFound,
    StorageFailure,
    UniquenessViolation,
)
from .worker_ops import (
    GLOBAL_BLOCK_QUALIFICATION,
    FeedbackEntry,
    GrantedQualification,
    Qualification,
    TipEntry,
    TipStatus,
)

SCHEMA_VERSION = 1

RECORD_KINDS = (
    "task",
    "task_run",
    "assignment",
    "unit",
    "worker",
    "agent",
    "qualification",
    "granted_qualification",
    "feedback",
    "tip",
)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS tasks (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    name TEXT NOT NULL UNIQUE,
    task_type TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS task_runs (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    task_id INTEGER NOT NULL REFERENCES tasks(id),
    config TEXT NOT NULL,
    is_completed INTEGER NOT NULL DEFAULT 0,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS assignments (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    task_run_id INTEGER NOT NULL REFERENCES task_runs(id),
    input_item TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS units (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    assignment_id INTEGER NOT NULL REFERENCES assignments(id),
    unit_index INTEGER NOT NULL,
    pay_amount TEXT NOT NULL,
    status TEXT NOT NULL,
    provider_external_id TEXT,
    unit_kind TEXT NOT NULL,
    qa_index INTEGER,
    created_at INTEGER NOT NULL,
    UNIQUE (assignment_id, unit_index)
);
CREATE TABLE IF NOT EXISTS workers (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    worker_name TEXT NOT NULL,
    provider_type TEXT NOT NULL,
    created_at INTEGER NOT NULL,
    UNIQUE (worker_name, provider_type)
);
CREATE TABLE IF NOT EXISTS agents (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    worker_id INTEGER NOT NULL REFERENCES workers(id),
    unit_id INTEGER NOT NULL REFERENCES units(id),
    status TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS qualifications (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    qualification_name TEXT NOT NULL UNIQUE,
    description TEXT,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS granted_qualifications (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    worker_id INTEGER NOT NULL REFERENCES workers(id),
    qualification_id INTEGER NOT NULL REFERENCES qualifications(id),
    value INTEGER NOT NULL,
    granted_at INTEGER NOT NULL,
    UNIQUE (worker_id, qualification_id)
);
CREATE TABLE IF NOT EXISTS feedback (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    agent_id INTEGER NOT NULL REFERENCES agents(id),
    text TEXT NOT NULL,
    category TEXT,
    created_at INTEGER NOT NULL,
    reviewed INTEGER NOT NULL DEFAULT 0,
    bonus_sent TEXT
);
CREATE TABLE IF NOT EXISTS tips (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    agent_id INTEGER NOT NULL REFERENCES agents(id),
    header TEXT NOT NULL,
    body TEXT NOT NULL,
    status TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS unit_status_log (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    unit_id INTEGER NOT NULL,
    old_status TEXT NOT NULL,
    new_status TEXT NOT NULL,
    at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS agent_status_log (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    agent_id INTEGER NOT NULL,
    old_status TEXT NOT NULL,
    new_status TEXT NOT NULL,
    at INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_units_assignment ON units(assignment_id);
CREATE INDEX IF NOT EXISTS idx_units_status ON units(status);
CREATE INDEX IF NOT EXISTS idx_agents_unit ON agents(unit_id);
CREATE INDEX IF NOT EXISTS idx_agents_worker ON agents(worker_id);
CREATE INDEX IF NOT EXISTS idx_grants_worker ON granted_qualifications(worker_id);
"""


@dataclass
class AgentStatePayload:
    """Everything saved while collecting one Unit: the inputs shown, the
    outputs produced (absent until submission), timing, and attachments."""

    inputs: Any = None
    outputs: Any = None
    times: dict[str, int | None] = field(
        default_factory=lambda: {"task_start": None, "task_end": None}
    )
    attachments: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "inputs": self.inputs,
            "outputs": self.outputs,
            "times": dict(self.times),
            "attachments": list(self.attachments),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AgentStatePayload":
        return cls(
            inputs=data.get("inputs"),
            outputs=data.get("outputs"),
            times=dict(data.get("times") or {"task_start": None, "task_end": None}),
            attachments=list(data.get("attachments") or []),
        )


# Export line key order is part of the interchange format; keep it stable.
EXPORT_KEYS = (
    "unit_id",
    "assignment_id",
    "worker_name",
    "status",
    "inputs",
    "outputs",
    "task_start",
    "task_end",
)


@dataclass(frozen=True)
class ExportedUnitRecord:
    unit_id: str
    assignment_id: str
    worker_name: str
    status: str
    inputs: Any
    outputs: Any
    task_start: int | None
    task_end: int | None

    def to_json_line(self) -> str:
        payload = {key: getattr(self, key) for key in EXPORT_KEYS}
        return json.dumps(payload, ensure_ascii=False, separators=(", ", ": "))

    @classmethod
    def from_json_line(cls, line: str) -> "ExportedUnitRecord":
        data = json.loads(line)
        return cls(**{key: data.get(key) for key in EXPORT_KEYS})


class Store(abc.ABC):
    """The required-call interface; back it differently to swap databases."""

    @abc.abstractmethod
    def create_record(self, kind: str, fields: dict[str, Any]) -> str: ...

    @abc.abstractmethod
    def find_records(self, kind: str, **filters: Any) -> list[Any]: ...

    @abc.abstractmethod
    def update_unit_status(self, unit_id: str, new: UnitStatus) -> None: ...

    @abc.abstractmethod
    def update_agent_status(self, agent_id: str, new: AgentStatus) -> None: ...

    @abc.abstractmethod
    def save_agent_state(
        self, agent_id: str, payload: AgentStatePayload, partial: bool
    ) -> None: ...

    @abc.abstractmethod
    def load_agent_state(self, agent_id: str) -> AgentStatePayload | None: ...

    @abc.abstractmethod
    def export_run(self, task_run_id: str, include_qa: bool = False) -> list[ExportedUnitRecord]: ...


class LocalStore(Store):
    """File-backed store. Thread-safe: one connection guarded by an RLock,
    every public call runs in its own transaction (nested calls join the
    enclosing one)."""

    def __init__(self, data_root: str | Path) -> None:
        self.data_root = Path(data_root)
        self.data_root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._txn_depth = 0
        try:
            self._conn = sqlite3.connect(
                self.data_root / "store.db", check_same_thread=False, isolation_level=None
            )
            self._conn.row_factory = sqlite3.Row
            self._conn.executescript(_SCHEMA)
            self._conn.execute(
                "INSERT OR IGNORE INTO meta (key, value) VALUES ('schema_version', ?)",
                (SCHEMA_VERSION,),
            )
            self._conn.execute(
                "INSERT OR IGNORE INTO meta (key, value) VALUES ('last_ts', 0)"
            )
        except sqlite3.Error as exc:
            raise StorageFailure(f"cannot open store at {data_root}: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    @contextmanager
    def transaction(self) -> Iterator[None]:
        with self._lock:
            root = self._txn_depth == 0
            if root:
                self._conn.execute("BEGIN IMMEDIATE")
            self._txn_depth += 1
            try:
                yield
            except BaseException:
                self._txn_depth -= 1
                if root:
                    self._conn.execute("ROLLBACK")
                raise
            else:
                self._txn_depth -= 1
                if root:
                    self._conn.execute("COMMIT")

    def _mint_ts(self) -> int:
        # Strictly monotonic across every record in this data_root, so
        # creation-time ordering is total (see decisions on tie-breaks).
        now = int(time.time() * 1000)
        row = self._conn.execute("SELECT value FROM meta WHERE key='last_ts'").fetchone()
        minted = max(now, int(row["value"]) + 1)
        self._conn.execute("UPDATE meta SET value=? WHERE key='last_ts'", (minted,))
        return minted

    # -- generic create / find ------------------------------------------------

    def create_record(self, kind: str, fields: dict[str, Any]) -> str:
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        with self.transaction():
            creator = getattr(self, f"_create_{kind}")
            return creator(dict(fields))

    def find_records(self, kind: str, **filters: Any) -> list[Any]:
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        with self._lock:
            finder = getattr(self, f"_find_{kind}")
            return finder(**filters)

    # -- creators -------------------------------------------------------------

    def _insert(self, sql: str, params: tuple) -> str:
        try:
            cursor = self._conn.execute(sql, params)
        except sqlite3.IntegrityError as exc:
            raise UniquenessViolation(str(exc)) from exc
        except sqlite3.Error as exc:
            raise StorageFailure(str(exc)) from exc
        return str(cursor.lastrowid)

    def _create_task(self, fields: dict[str, Any]) -> str:
        return self._insert(
            "INSERT INTO tasks (name, task_type, created_at) VALUES (?, ?, ?)",
            (fields["name"], fields["task_type"], self._mint_ts()),
        )

    def _create_task_run(self, fields: dict[str, Any]) -> str:
        self.get_task(str(fields["task_id"]))
        return self._insert(
            "INSERT INTO task_runs (task_id, config, created_at) VALUES (?, ?, ?)",
            (int(fields["task_id"]), json.dumps(fields.get("config") or {}), self._mint_ts()),
        )

    def _create_assignment(self, fields: dict[str, Any]) -> str:
        self.get_task_run(str(fields["task_run_id"]))
        return self._insert(
            "INSERT INTO assignments (task_run_id, input_item, created_at) VALUES (?, ?, ?)",
            (int(fields["task_run_id"]), json.dumps(fields["input_item"]), self._mint_ts()),
        )

    def _create_unit(self, fields: dict[str, Any]) -> str:
        self.get_assignment(str(fields["assignment_id"]))
        pay = Decimal(str(fields.get("pay_amount", "0")))
        if pay < 0:
            raise ValueError("pay_amount must be >= 0")
        kind = UnitKind(fields.get("unit_kind", UnitKind.REAL))
        return self._insert(
            "INSERT INTO units (assignment_id, unit_index, pay_amount, status,"
            " provider_external_id, unit_kind, qa_index, created_at)"
            " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
            (
                int(fields["assignment_id"]),
                int(fields["unit_index"]),
                str(pay),
                UnitStatus(fields.get("status", UnitStatus.CREATED)).value,
                fields.get("provider_external_id"),
                kind.value,
                fields.get("qa_index"),
                self._mint_ts(),
            ),
        )

    def _create_worker(self, fields: dict[str, Any]) -> str:
        return self._insert(
            "INSERT INTO workers (worker_name, provider_type, created_at) VALUES (?, ?, ?)",
            (fields["worker_name"], fields["provider_type"], self._mint_ts()),
        )

    def _create_agent(self, fields: dict[str, Any]) -> str:
        self.get_worker(str(fields["worker_id"]))
        unit_id = str(fields["unit_id"])
        self.get_unit(unit_id)
        # Hard guard for the core invariant: one live agent per unit.
        live = self._conn.execute(
            "SELECT COUNT(*) AS n FROM agents WHERE unit_id=? AND status NOT IN"
            " ('disconnected','timeout','returned','approved','rejected','soft_rejected')",
            (int(unit_id),),
        ).fetchone()
        if live["n"]:
            raise UniquenessViolation(f"unit {unit_id} already has a non-terminal agent")
        return self._insert(
            "INSERT INTO agents (worker_id, unit_id, status, created_at) VALUES (?, ?, ?, ?)",
            (
                int(fields["worker_id"]),
                int(unit_id),
                AgentStatus(fields.get("status", AgentStatus.REGISTERED)).value,
                self._mint_ts(),
            ),
        )

    def _create_qualification(self, fields: dict[str, Any]) -> str:
        return self._insert(
            "INSERT INTO qualifications (qualification_name, description, created_at)"
            " VALUES (?, ?, ?)",
            (fields["qualification_name"], fields.get("description"), self._mint_ts()),
        )

    def _create_granted_qualification(self, fields: dict[str, Any]) -> str:
        return self._insert(
            "INSERT INTO granted_qualifications (worker_id, qualification_id, value, granted_at)"
            " VALUES (?, ?, ?, ?)",
            (
                int(fields["worker_id"]),
                int(fields["qualification_id"]),
                int(fields.get("value", 1)),
                self._mint_ts(),
            ),
        )

    def _create_feedback(self, fields: dict[str, Any]) -> str:
        return self._insert(
            "INSERT INTO feedback (agent_id, text, category, created_at) VALUES (?, ?, ?, ?)",
            (int(fields["agent_id"]), fields["text"], fields.get("category"), self._mint_ts()),
        )

    def _create_tip(self, fields: dict[str, Any]) -> str:
        return self._insert(
            "INSERT INTO tips (agent_id, header, body, status, created_at)"
            " VALUES (?, ?, ?, ?, ?)",
            (
                int(fields["agent_id"]),
                fields["header"],
                fields["body"],
                TipStatus.PENDING.value,
                self._mint_ts(),
            ),
        )

    # -- row -> entity --------------------------------------------------------

    def _task_of(self, row: sqlite3.Row) -> Task:
        return Task(
            id=str(row["id"]),
            name=row["name"],
            task_type=row["task_type"],
            created_at=row["created_at"],
        )

    def _task_run_of(self, row: sqlite3.Row) -> TaskRun:
        return TaskRun(
            id=str(row["id"]),
            task_id=str(row["task_id"]),
            config=json.loads(row["config"]),
            is_completed=bool(row["is_completed"]),
            created_at=row["created_at"],
        )

    def _assignment_of(self, row: sqlite3.Row) -> Assignment:
        return Assignment(
            id=str(row["id"]),
            task_run_id=str(row["task_run_id"]),
            input_item=json.loads(row["input_item"]),
            created_at=row["created_at"],
        )

    def _unit_of(self, row: sqlite3.Row) -> Unit:
        return Unit(
            id=str(row["id"]),
            assignment_id=str(row["assignment_id"]),
            unit_index=row["unit_index"],
            pay_amount=Decimal(row["pay_amount"]),
            status=UnitStatus(row["status"]),
            provider_external_id=row["provider_external_id"],
            unit_kind=UnitKind(row["unit_kind"]),
            qa_index=row["qa_index"],
            created_at=row["created_at"],
        )

    def _worker_of(self, row: sqlite3.Row) -> Worker:
        blocked = self._conn.execute(
            "SELECT COUNT(*) AS n FROM granted_qualifications g"
            " JOIN qualifications q ON q.id = g.qualification_id"
            " WHERE g.worker_id=? AND q.qualification_name=?",
            (row["id"], GLOBAL_BLOCK_QUALIFICATION),
        ).fetchone()
        return Worker(
            id=str(row["id"]),
            worker_name=row["worker_name"],
            provider_type=row["provider_type"],
            is_blocked=bool(blocked["n"]),
            created_at=row["created_at"],
        )

    def _agent_of(self, row: sqlite3.Row) -> Agent:
        return Agent(
            id=str(row["id"]),
            worker_id=str(row["worker_id"]),
            unit_id=str(row["unit_id"]),
            status=AgentStatus(row["status"]),
            state_ref=self._state_ref(str(row["id"]), str(row["unit_id"])),
            created_at=row["created_at"],
        )

    def _feedback_of(self, row: sqlite3.Row) -> FeedbackEntry:
        return FeedbackEntry(
            id=str(row["id"]),
            agent_id=str(row["agent_id"]),
            text=row["text"],
            category=row["category"],
            created_at=row["created_at"],
            reviewed=bool(row["reviewed"]),
            bonus_sent=Decimal(row["bonus_sent"]) if row["bonus_sent"] is not None else None,
        )

    def _tip_of(self, row: sqlite3.Row) -> TipEntry:
        return TipEntry(
            id=str(row["id"]),
            agent_id=str(row["agent_id"]),
            header=row["header"],
            body=row["body"],
            status=TipStatus(row["status"]),
            created_at=row["created_at"],
        )

    def _qualification_of(self, row: sqlite3.Row) -> Qualification:
        return Qualification(
            id=str(row["id"]),
            qualification_name=row["qualification_name"],
            description=row["description"],
            created_at=row["created_at"],
        )

    # -- getters --------------------------------------------------------------

    def _get_row(self, table: str, kind: str, record_id: str) -> sqlite3.Row:
        try:
            numeric = int(record_id)
        except (TypeError, ValueError):
            raise NotFound(kind, str(record_id)) from None
        row = self._conn.execute(f"SELECT * FROM {table} WHERE id=?", (numeric,)).fetchone()
        if row is None:
            raise NotFound(kind, record_id)
        return row

    def get_task(self, task_id: str) -> Task:
        with self._lock:
            return self._task_of(self._get_row("tasks", "task", task_id))

    def get_task_run(self, run_id: str) -> TaskRun:
        with self._lock:
            return self._task_run_of(self._get_row("task_runs", "task_run", run_id))

    def get_assignment(self, assignment_id: str) -> Assignment:
        with self._lock:
            return self._assignment_of(self._get_row("assignments", "assignment", assignment_id))

    def get_unit(self, unit_id: str) -> Unit:
        with self._lock:
            return self._unit_of(self._get_row("units", "unit", unit_id))

    def get_worker(self, worker_id: str) -> Worker:
        with self._lock:
            return self._worker_of(self._get_row("workers", "worker", worker_id))

    def get_agent(self, agent_id: str) -> Agent:
        with self._lock:
            return self._agent_of(self._get_row("agents", "agent", agent_id))

    def get_feedback(self, feedback_id: str) -> FeedbackEntry:
        with self._lock:
            return self._feedback_of(self._get_row("feedback", "feedback", feedback_id))

    def get_tip(self, tip_id: str) -> TipEntry:
        with self._lock:
            return self._tip_of(self._get_row("tips", "tip", tip_id))

    # -- finders (newest-last == insertion order) ------------------------------

    def _select(self, table: str, clauses: list[str], params: list[Any]) -> list[sqlite3.Row]:
        sql = f"SELECT * FROM {table}"
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY id ASC"
        return self._conn.execute(sql, params).fetchall()

    def _find_task(self, name: str | None = None, task_type: str | None = None) -> list[Task]:
        clauses, params = [], []
        if name is not None:
            clauses.append("name=?")
            params.append(name)
        if task_type is not None:
            clauses.append("task_type=?")
            params.append(task_type)
        return [self._task_of(r) for r in self._select("tasks", clauses, params)]

    def _find_task_run(
        self, task_id: str | None = None, is_completed: bool | None = None
    ) -> list[TaskRun]:
        clauses, params = [], []
        if task_id is not None:
            clauses.append("task_id=?")
            params.append(int(task_id))
        if is_completed is not None:
            clauses.append("is_completed=?")
            params.append(int(is_completed))
        return [self._task_run_of(r) for r in self._select("task_runs", clauses, params)]

    def _find_assignment(self, task_run_id: str | None = None) -> list[Assignment]:
        clauses, params = [], []
        if task_run_id is not None:
            clauses.append("task_run_id=?")
            params.append(int(task_run_id))
        return [self._assignment_of(r) for r in self._select("assignments", clauses, params)]

    def _find_unit(
        self,
        assignment_id: str | None = None,
        status: UnitStatus | None = None,
        unit_kind: UnitKind | None = None,
        task_run_id: str | None = None,
    ) -> list[Unit]:
        sql = "SELECT units.* FROM units"
        clauses, params = [], []
        if task_run_id is not None:
            sql += " JOIN assignments ON assignments.id = units.assignment_id"
            clauses.append("assignments.task_run_id=?")
            params.append(int(task_run_id))
        if assignment_id is not None:
            clauses.append("units.assignment_id=?")
            params.append(int(assignment_id))
        if status is not None:
            clauses.append("units.status=?")
            params.append(UnitStatus(status).value)
        if unit_kind is not None:
            clauses.append("units.unit_kind=?")
            params.append(UnitKind(unit_kind).value)
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY units.id ASC"
        return [self._unit_of(r) for r in self._conn.execute(sql, params).fetchall()]

    def _find_worker(
        self, worker_name: str | None = None, provider_type: str | None = None
    ) -> list[Worker]:
        clauses, params = [], []
        if worker_name is not None:
            clauses.append("worker_name=?")
            params.append(worker_name)
        if provider_type is not None:
            clauses.append("provider_type=?")
            params.append(provider_type)
        return [self._worker_of(r) for r in self._select("workers", clauses, params)]

    def _find_agent(
        self,
        worker_id: str | None = None,
        unit_id: str | None = None,
        status: AgentStatus | None = None,
        task_run_id: str | None = None,
    ) -> list[Agent]:
        sql = "SELECT agents.* FROM agents"
        clauses, params = [], []
        if task_run_id is not None:
            sql += (
                " JOIN units ON units.id = agents.unit_id"
                " JOIN assignments ON assignments.id = units.assignment_id"
            )
            clauses.append("assignments.task_run_id=?")
            params.append(int(task_run_id))
        if worker_id is not None:
            clauses.append("agents.worker_id=?")
            params.append(int(worker_id))
        if unit_id is not None:
            clauses.append("agents.unit_id=?")
            params.append(int(unit_id))
        if status is not None:
            clauses.append("agents.status=?")
            params.append(AgentStatus(status).value)
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY agents.id ASC"
        return [self._agent_of(r) for r in self._conn.execute(sql, params).fetchall()]

    def _find_qualification(self, qualification_name: str | None = None) -> list[Qualification]:
        clauses, params = [], []
        if qualification_name is not None:
            clauses.append("qualification_name=?")
            params.append(qualification_name)
        return [self._qualification_of(r) for r in self._select("qualifications", clauses, params)]

    def _find_granted_qualification(
        self, worker_id: str | None = None, qualification_name: str | None = None
    ) -> list[GrantedQualification]:
        sql = (
            "SELECT g.*, q.qualification_name AS qname FROM granted_qualifications g"
            " JOIN qualifications q ON q.id = g.qualification_id"
        )
        clauses, params = [], []
        if worker_id is not None:
            clauses.append("g.worker_id=?")
            params.append(int(worker_id))
        if qualification_name is not None:
            clauses.append("q.qualification_name=?")
            params.append(qualification_name)
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY g.id ASC"
        return [
            GrantedQualification(
                worker_id=str(r["worker_id"]),
                qualification_id=str(r["qualification_id"]),
                qualification_name=r["qname"],
                value=r["value"],
                granted_at=r["granted_at"],
            )
            for r in self._conn.execute(sql, params).fetchall()
        ]

    def _find_feedback(self, agent_id: str | None = None) -> list[FeedbackEntry]:
        clauses, params = [], []
        if agent_id is not None:
            clauses.append("agent_id=?")
            params.append(int(agent_id))
        return [self._feedback_of(r) for r in self._select("feedback", clauses, params)]

    def _find_tip(self, agent_id: str | None = None) -> list[TipEntry]:
        clauses, params = [], []
        if agent_id is not None:
            clauses.append("agent_id=?")
            params.append(int(agent_id))
        return [self._tip_of(r) for r in self._select("tips", clauses, params)]

    # -- status updates -------------------------------------------------------

    def update_unit_status(self, unit_id: str, new: UnitStatus) -> None:
        new = UnitStatus(new)
        with self.transaction():
            row = self._get_row("units", "unit", unit_id)
            old = UnitStatus(row["status"])
            if (old, new) not in LEGAL_UNIT_CHANGES:
                raise IllegalTransition(old.value, new.value)
            at = self._mint_ts()
            self._conn.execute("UPDATE units SET status=? WHERE id=?", (new.value, row["id"]))
            self._conn.execute(
                "INSERT INTO unit_status_log (unit_id, old_status, new_status, at)"
                " VALUES (?, ?, ?, ?)",
                (row["id"], old.value, new.value, at),
            )

    def update_agent_status(self, agent_id: str, new: AgentStatus) -> None:
        new = AgentStatus(new)
        with self.transaction():
            row = self._get_row("agents", "agent", agent_id)
            old = AgentStatus(row["status"])
            if (old, new) not in LEGAL_AGENT_CHANGES:
                raise IllegalTransition(old.value, new.value)
            at = self._mint_ts()
            self._conn.execute("UPDATE agents SET status=? WHERE id=?", (new.value, row["id"]))
            self._conn.execute(
                "INSERT INTO agent_status_log (agent_id, old_status, new_status, at)"
                " VALUES (?, ?, ?, ?)",
                (row["id"], old.value, new.value, at),
            )

    def unit_status_log(self, unit_id: str) -> list[tuple[str, str, int]]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT old_status, new_status, at FROM unit_status_log"
                " WHERE unit_id=? ORDER BY id ASC",
                (int(unit_id),),
            ).fetchall()
        return [(r["old_status"], r["new_status"], r["at"]) for r in rows]

    def agent_status_log(self, agent_id: str) -> list[tuple[str, str, int]]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT old_status, new_status, at FROM agent_status_log"
                " WHERE agent_id=? ORDER BY id ASC",
                (int(agent_id),),
            ).fetchall()
        return [(r["old_status"], r["new_status"], r["at"]) for r in rows]

    def set_unit_external_id(self, unit_id: str, external_id: str) -> None:
        with self.transaction():
            row = self._get_row("units", "unit", unit_id)
            self._conn.execute(
                "UPDATE units SET provider_external_id=? WHERE id=?", (external_id, row["id"])
            )

    def mark_run_completed(self, run_id: str) -> None:
        with self.transaction():
            row = self._get_row("task_runs", "task_run", run_id)
            self._conn.execute("UPDATE task_runs SET is_completed=1 WHERE id=?", (row["id"],))

    # -- worker / qualification helpers ----------------------------------------

    def ensure_worker(self, worker_name: str, provider_type: str) -> Worker:
        with self.transaction():
            found = self._find_worker(worker_name=worker_name, provider_type=provider_type)
            if found:
                return found[0]
            worker_id = self._create_worker(
                {"worker_name": worker_name, "provider_type": provider_type}
            )
            return self.get_worker(worker_id)

    def ensure_qualification(self, qualification_name: str) -> Qualification:
        with self.transaction():
            found = self._find_qualification(qualification_name=qualification_name)
            if found:
                return found[0]
            qual_id = self._create_qualification({"qualification_name": qualification_name})
            return self._qualification_of(self._get_row("qualifications", "qualification", qual_id))

    def grant_qualification(self, worker_id: str, qualification_name: str, value: int) -> None:
        with self.transaction():
            self.get_worker(worker_id)
            qual = self.ensure_qualification(qualification_name)
            self._conn.execute(
                "INSERT INTO granted_qualifications (worker_id, qualification_id, value, granted_at)"
                " VALUES (?, ?, ?, ?)"
                " ON CONFLICT (worker_id, qualification_id)"
                " DO UPDATE SET value=excluded.value, granted_at=excluded.granted_at",
                (int(worker_id), int(qual.id), int(value), self._mint_ts()),
            )

    def revoke_qualification(self, worker_id: str, qualification_name: str) -> None:
        with self.transaction():
            cursor = self._conn.execute(
                "DELETE FROM granted_qualifications WHERE worker_id=? AND qualification_id IN"
                " (SELECT id FROM qualifications WHERE qualification_name=?)",
                (int(worker_id), qualification_name),
            )
            if cursor.rowcount == 0:
                raise NotFound("granted_qualification", f"{worker_id}:{qualification_name}")

    def get_granted_value(self, worker_id: str, qualification_name: str) -> int | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT g.value FROM granted_qualifications g"
                " JOIN qualifications q ON q.id = g.qualification_id"
                " WHERE g.worker_id=? AND q.qualification_name=?",
                (int(worker_id), qualification_name),
            ).fetchone()
        return None if row is None else int(row["value"])

    # -- feedback / tips helpers ----------------------------------------------

    def update_feedback(
        self, feedback_id: str, reviewed: bool, bonus_sent: Decimal | None
    ) -> None:
        with self.transaction():
            row = self._get_row("feedback", "feedback", feedback_id)
            self._conn.execute(
                "UPDATE feedback SET reviewed=?, bonus_sent=? WHERE id=?",
                (int(reviewed), str(bonus_sent) if bonus_sent is not None else None, row["id"]),
            )

    def update_tip_status(self, tip_id: str, status: TipStatus) -> None:
        with self.transaction():
            row = self._get_row("tips", "tip", tip_id)
            self._conn.execute(
                "UPDATE tips SET status=? WHERE id=?", (TipStatus(status).value, row["id"])
            )

    def _task_join_for_agents(self, table: str) -> str:
        return (
            f"SELECT {table}.* FROM {table}"
            f" JOIN agents ON agents.id = {table}.agent_id"
            " JOIN units ON units.id = agents.unit_id"
            " JOIN assignments ON assignments.id = units.assignment_id"
            " JOIN task_runs ON task_runs.id = assignments.task_run_id"
            " WHERE task_runs.task_id=?"
            f" ORDER BY {table}.id ASC"
        )

    def find_feedback_for_task(self, task_id: str) -> list[FeedbackEntry]:
        with self._lock:
            rows = self._conn.execute(
                self._task_join_for_agents("feedback"), (int(task_id),)
            ).fetchall()
        return [self._feedback_of(r) for r in rows]

    def find_tips_for_task(self, task_id: str) -> list[TipEntry]:
        with self._lock:
            rows = self._conn.execute(self._task_join_for_agents("tips"), (int(task_id),)).fetchall()
        return [self._tip_of(r) for r in rows]

    # -- agent state files ------------------------------------------------------

    def _run_id_for_unit(self, unit_id: str) -> str:
        unit = self.get_unit(unit_id)
        assignment = self.get_assignment(unit.assignment_id)
        return assignment.task_run_id

    def _state_ref(self, agent_id: str, unit_id: str) -> str:
        return f"runs/{self._run_id_for_unit(unit_id)}/{agent_id}"

    def agent_state_dir(self, agent_id: str) -> Path:
        agent = self._get_row("agents", "agent", agent_id)
        return self.data_root / self._state_ref(agent_id, str(agent["unit_id"]))

    def save_agent_state(self, agent_id: str, payload: AgentStatePayload, partial: bool) -> None:
        """Atomically replace the agent's snapshot. A final save freezes it."""
        with self._lock:
            state_dir = self.agent_state_dir(agent_id)
            state_path = state_dir / "state.json"
            if state_path.exists():
                existing = json.loads(state_path.read_text(encoding="utf-8"))
                if existing.get("final"):
                    raise FinalizedStateOverwrite(f"agent {agent_id} state already finalized")
            state_dir.mkdir(parents=True, exist_ok=True)
            document = {"final": not partial, "payload": payload.to_dict()}
            tmp_path = state_path.with_suffix(".json.tmp")
            with open(tmp_path, "w", encoding="utf-8") as handle:
                json.dump(document, handle, ensure_ascii=False)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_path, state_path)

    def load_agent_state(self, agent_id: str) -> AgentStatePayload | None:
        with self._lock:
            state_path = self.agent_state_dir(agent_id) / "state.json"
            if not state_path.exists():
                return None
            document = json.loads(state_path.read_text(encoding="utf-8"))
        return AgentStatePayload.from_dict(document["payload"])

    def agent_state_is_final(self, agent_id: str) -> bool:
        with self._lock:
            state_path = self.agent_state_dir(agent_id) / "state.json"
            if not state_path.exists():
                return False
            return bool(json.loads(state_path.read_text(encoding="utf-8")).get("final"))

    # -- export ------------------------------------------------------------------

    def export_run(self, task_run_id: str, include_qa: bool = False) -> list[ExportedUnitRecord]:
        """One record per unit that has an agent with saved state, ordered by
        (assignment creation, unit_index). QA units are excluded by default."""
        with self._lock:
            self.get_task_run(task_run_id)
            assignments = self._find_assignment(task_run_id=task_run_id)
            records: list[ExportedUnitRecord] = []
            for assignment in sorted(assignments, key=lambda a: a.created_at):
                units = self._find_unit(assignment_id=assignment.id)
                for unit in sorted(units, key=lambda u: u.unit_index):
                    if not include_qa and unit.unit_kind is not UnitKind.REAL:
                        continue
                    agents = self._find_agent(unit_id=unit.id)
                    stated = [a for a in agents if self.load_agent_state(a.id) is not None]
                    if not stated:
                        continue
                    agent = max(stated, key=lambda a: a.created_at)
                    state = self.load_agent_state(agent.id)
                    assert state is not None
                    worker = self.get_worker(agent.worker_id)
                    records.append(
                        ExportedUnitRecord(
                            unit_id=unit.id,
                            assignment_id=assignment.id,
                            worker_name=worker.worker_name,
                            status=unit.status.value,
                            inputs=state.inputs,
                            outputs=state.outputs,
                            task_start=state.times.get("task_start"),
                            task_end=state.times.get("task_end"),
                        )
                    )
        return records

    def export_run_lines(self, task_run_id: str, include_qa: bool = False) -> list[str]:
        return [record.to_json_line() for record in self.export_run(task_run_id, include_qa)]
