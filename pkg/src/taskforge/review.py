"""Review tooling: consume items from a line-delimited stream or from the
store, serve them to a reviewer over a local HTTP API, record decisions, and
apply them back (statuses, bonuses, qualifications).

The HTTP surface is deliberately small so the browser UI and scripted
clients share one contract:

    GET  /api/items/count          -> {"count": N, "decided": M}
    GET  /api/items/<i>            -> {"index", "data", "decision"?, "rendered"}
    POST /api/items/<i>/decision   -> records a ReviewDecision
    POST /api/finish               -> stop serving early
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, IO, Iterable

from .entities import AgentStatus, UnitStatus
from .errors import (
    DoubleDecision,
    NoReviewableUnits,
    ParseError,
    TaskforgeError,
    UnknownTemplate,
)
from .providers import CrowdProvider
from .store import ExportedUnitRecord, LocalStore

logger = logging.getLogger(__name__)

DEFAULT_PORT = 3030


class Verdict(str, Enum):
    APPROVE = "approve"
    REJECT = "reject"
    SOFT_REJECT = "soft_reject"


@dataclass(frozen=True)
class ReviewDecision:
    verdict: Verdict
    bonus: Decimal | None = None
    feedback_to_worker: str | None = None
    qualifications_to_grant: tuple[tuple[str, int], ...] = ()
    reviewed_at: int = 0

    def __post_init__(self) -> None:
        if self.bonus is not None and self.bonus <= 0:
            raise ValueError("bonus must be > 0 when present")

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "bonus": str(self.bonus) if self.bonus is not None else None,
            "feedback_to_worker": self.feedback_to_worker,
            "qualifications_to_grant": [list(pair) for pair in self.qualifications_to_grant],
            "reviewed_at": self.reviewed_at,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ReviewDecision":
        try:
            verdict = Verdict(data["verdict"])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"decision requires a verdict in {[v.value for v in Verdict]}") from exc
        bonus = data.get("bonus")
        if bonus is not None:
            try:
                bonus = Decimal(str(bonus))
            except InvalidOperation as exc:
                raise ValueError(f"bonus {bonus!r} is not a number") from exc
        grants: list[tuple[str, int]] = []
        for entry in data.get("qualifications_to_grant") or []:
            if isinstance(entry, dict):
                grants.append((str(entry["name"]), int(entry.get("value", 1))))
            else:
                name, value = entry
                grants.append((str(name), int(value)))
        return cls(
            verdict=verdict,
            bonus=bonus,
            feedback_to_worker=data.get("feedback_to_worker"),
            qualifications_to_grant=tuple(grants),
            reviewed_at=int(data.get("reviewed_at") or time.time() * 1000),
        )


@dataclass
class ReviewItem:
    index: int
    data: Any
    raw: str  # the exact source line; emitted back byte-identical
    unit_id: str | None = None  # set for DB-sourced items
    decision: ReviewDecision | None = None


# -- renderers ---------------------------------------------------------------------


def _collect_strings(value: Any, bag: list[str]) -> None:
    if isinstance(value, str):
        bag.append(value)
    elif isinstance(value, dict):
        for child in value.values():
            _collect_strings(child, bag)
    elif isinstance(value, (list, tuple)):
        for child in value:
            _collect_strings(child, bag)


def _render_json_pretty(data: Any) -> dict[str, Any]:
    return {
        "template": "json-pretty",
        "pretty": json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False),
    }


def _render_word_cloud(data: Any) -> dict[str, Any]:
    strings: list[str] = []
    _collect_strings(data, strings)
    counts: dict[str, int] = {}
    for text in strings:
        for token in text.casefold().split():
            counts[token] = counts.get(token, 0) + 1
    ranked = sorted(counts.items(), key=lambda pair: (-pair[1], pair[0]))
    return {"template": "word-cloud", "tokens": [[token, count] for token, count in ranked]}


TEMPLATES: dict[str, Callable[[Any], dict[str, Any]]] = {
    "json-pretty": _render_json_pretty,
    "word-cloud": _render_word_cloud,
}


def render_template(data: Any, template_name: str) -> dict[str, Any]:
    """Pure transformation of one item into a renderable descriptor."""
    if template_name not in TEMPLATES:
        raise UnknownTemplate(f"no review template named {template_name!r}")
    return TEMPLATES[template_name](data)


# -- session + server -----------------------------------------------------------------


class ReviewSession:
    """The decisions being collected over one review invocation."""

    def __init__(
        self,
        items: list[ReviewItem],
        template: str = "json-pretty",
        allow_overwrite: bool = False,
        on_decision: Callable[[ReviewItem, ReviewDecision], None] | None = None,
    ) -> None:
        if template not in TEMPLATES:
            raise UnknownTemplate(f"no review template named {template!r}")
        self.items = items
        self.template = template
        self.allow_overwrite = allow_overwrite
        self.on_decision = on_decision
        self._lock = threading.Lock()
        self.finished = threading.Event()
        if not items:
            self.finished.set()

    @property
    def count(self) -> int:
        return len(self.items)

    def decided_count(self) -> int:
        return sum(1 for item in self.items if item.decision is not None)

    def item(self, index: int) -> ReviewItem:
        if not 0 <= index < len(self.items):
            raise IndexError(index)
        return self.items[index]

    def decide(self, index: int, decision: ReviewDecision) -> ReviewItem:
        with self._lock:
            item = self.item(index)
            if item.decision is not None and not self.allow_overwrite:
                raise DoubleDecision(f"item {index} already decided")
            first_decision = item.decision is None
            item.decision = decision
            if self.on_decision is not None and first_decision:
                self.on_decision(item, decision)
            if all(i.decision is not None for i in self.items):
                self.finished.set()
            return item


_BUILTIN_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>Review</title></head>
<body>
<h1>Review</h1>
<p>This server exposes the review API under <code>/api/items/...</code>.
Point the reviewer web client at it, or drive it with any HTTP client.</p>
</body></html>
"""


class _ReviewHandler(BaseHTTPRequestHandler):
    server: "ReviewServer"

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002 - stdlib name
        logger.debug("review http: " + format, *args)

    def _json(self, status: int, payload: Any) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _session(self) -> ReviewSession:
        return self.server.session  # type: ignore[attr-defined]

    def do_GET(self) -> None:  # noqa: N802 - stdlib name
        session = self._session()
        path = self.path.split("?", 1)[0]
        if path == "/api/items/count":
            self._json(200, {"count": session.count, "decided": session.decided_count()})
            return
        if path.startswith("/api/items/"):
            try:
                index = int(path.rsplit("/", 1)[-1])
                item = session.item(index)
            except (ValueError, IndexError):
                self._json(404, {"error": "no such item"})
                return
            payload: dict[str, Any] = {
                "index": item.index,
                "data": item.data,
                "rendered": render_template(item.data, session.template),
            }
            if item.decision is not None:
                payload["decision"] = item.decision.to_dict()
            self._json(200, payload)
            return
        self._serve_ui(path)

    def _serve_ui(self, path: str) -> None:
        ui_dir = self.server.ui_dir  # type: ignore[attr-defined]
        if ui_dir is None:
            body = _BUILTIN_PAGE.encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "text/html")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            return
        relative = path.lstrip("/") or "index.html"
        target = (ui_dir / relative).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            self._json(404, {"error": "not found"})
            return
        import mimetypes

        body = target.read_bytes()
        self.send_response(200)
        self.send_header(
            "Content-Type", mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        )
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:  # noqa: N802 - stdlib name
        session = self._session()
        path = self.path.split("?", 1)[0]
        if path == "/api/finish":
            session.finished.set()
            self._json(200, {"ok": True})
            return
        if path.startswith("/api/items/") and path.endswith("/decision"):
            try:
                index = int(path.split("/")[3])
            except (ValueError, IndexError):
                self._json(404, {"error": "no such item"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            try:
                decision = ReviewDecision.from_dict(json.loads(self.rfile.read(length) or b"{}"))
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                self._json(400, {"error": str(exc)})
                return
            try:
                session.decide(index, decision)
            except IndexError:
                self._json(404, {"error": "no such item"})
                return
            except DoubleDecision as exc:
                self._json(409, {"error": str(exc)})
                return
            except TaskforgeError as exc:
                self._json(500, {"error": str(exc)})
                return
            self._json(200, {"ok": True, "decided": session.decided_count()})
            return
        self._json(404, {"error": "unknown endpoint"})


class ReviewServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, session: ReviewSession, port: int, ui_dir: Path | None = None) -> None:
        super().__init__(("127.0.0.1", port), _ReviewHandler)
        self.session = session
        self.ui_dir = ui_dir

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve_review(
    session: ReviewSession, port: int = DEFAULT_PORT, ui_dir: Path | None = None
) -> ReviewServer:
    """Start the review server in a background thread; the caller waits on
    session.finished and then shuts it down."""
    server = ReviewServer(session, port, ui_dir)
    thread = threading.Thread(target=server.serve_forever, name="review-server", daemon=True)
    thread.start()
    return server


def parse_stream(lines: Iterable[str]) -> list[ReviewItem]:
    """Parse every input line up front; any bad line aborts before serving."""
    items: list[ReviewItem] = []
    for line_number, line in enumerate(lines, start=1):
        raw = line.rstrip("\n")
        if not raw.strip():
            continue
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(line_number, str(exc)) from exc
        items.append(ReviewItem(index=len(items), data=data, raw=raw))
    return items


def emit_decision_line(out: IO[str], item: ReviewItem, decision: ReviewDecision) -> None:
    # The raw source text is spliced in verbatim so the data field stays
    # byte-identical to the input line.
    out.write(
        '{"index": %d, "data": %s, "decision": %s}\n'
        % (item.index, item.raw, json.dumps(decision.to_dict(), ensure_ascii=False))
    )
    out.flush()


def review_from_stream(
    lines: Iterable[str],
    out: IO[str],
    template: str = "json-pretty",
    port: int = DEFAULT_PORT,
    allow_overwrite: bool = False,
    ui_dir: Path | None = None,
    on_started: Callable[[ReviewServer], None] | None = None,
) -> int:
    """Serve piped-in records for review; one decision line out per item.
    Returns the number of decided items once the server drains."""
    items = parse_stream(lines)
    session = ReviewSession(
        items,
        template=template,
        allow_overwrite=allow_overwrite,
        on_decision=lambda item, decision: emit_decision_line(out, item, decision),
    )
    server = serve_review(session, port, ui_dir)
    try:
        if on_started is not None:
            on_started(server)
        session.finished.wait()
    finally:
        server.shutdown()
    return session.decided_count()


def reviewable_units(store: LocalStore, task_name: str) -> list[tuple[str, ExportedUnitRecord]]:
    tasks = store.find_records("task", name=task_name)
    if not tasks:
        raise NoReviewableUnits(f"no task named {task_name!r}")
    pairs: list[tuple[str, ExportedUnitRecord]] = []
    for run in store.find_records("task_run", task_id=tasks[0].id):
        for record in store.export_run(run.id):
            unit = store.get_unit(record.unit_id)
            if unit.status is UnitStatus.COMPLETED:
                pairs.append((unit.id, record))
    if not pairs:
        raise NoReviewableUnits(f"task {task_name!r} has no COMPLETED units to review")
    return pairs


def apply_db_decision(
    store: LocalStore,
    provider: CrowdProvider | None,
    unit_id: str,
    decision: ReviewDecision,
) -> None:
    """Flip the unit + agent statuses and route bonus/qualifications."""
    unit = store.get_unit(unit_id)
    agents = [
        a
        for a in store.find_records("agent", unit_id=unit_id)
        if a.status is AgentStatus.SUBMITTED
    ]
    agent = agents[-1] if agents else None
    unit_status = {
        Verdict.APPROVE: UnitStatus.ACCEPTED,
        Verdict.REJECT: UnitStatus.REJECTED,
        Verdict.SOFT_REJECT: UnitStatus.SOFT_REJECTED,
    }[decision.verdict]
    agent_status = {
        Verdict.APPROVE: AgentStatus.APPROVED,
        Verdict.REJECT: AgentStatus.REJECTED,
        Verdict.SOFT_REJECT: AgentStatus.SOFT_REJECTED,
    }[decision.verdict]
    store.update_unit_status(unit.id, unit_status)
    worker = None
    if agent is not None:
        store.update_agent_status(agent.id, agent_status)
        worker = store.get_worker(agent.worker_id)
        if provider is not None:
            if decision.verdict is Verdict.APPROVE:
                provider.approve_agent(agent)
            else:
                provider.reject_agent(agent, soft=decision.verdict is Verdict.SOFT_REJECT)
    if worker is not None:
        if decision.bonus is not None and provider is not None:
            provider.bonus_worker(worker, decision.bonus, "review bonus")
        if decision.feedback_to_worker and provider is not None:
            provider.message_worker(worker, decision.feedback_to_worker)
        for name, value in decision.qualifications_to_grant:
            store.grant_qualification(worker.id, name, value)


def review_from_db(
    store: LocalStore,
    task_name: str,
    provider: CrowdProvider | None = None,
    template: str = "json-pretty",
    port: int = DEFAULT_PORT,
    allow_overwrite: bool = False,
    ui_dir: Path | None = None,
    out: IO[str] | None = None,
    on_started: Callable[[ReviewServer], None] | None = None,
) -> int:
    """Review a task's COMPLETED units; decisions apply back to the store
    (and provider) as they arrive."""
    pairs = reviewable_units(store, task_name)
    items = [
        ReviewItem(index=i, data=json.loads(record.to_json_line()), raw=record.to_json_line(),
                   unit_id=unit_id)
        for i, (unit_id, record) in enumerate(pairs)
    ]

    def on_decision(item: ReviewItem, decision: ReviewDecision) -> None:
        assert item.unit_id is not None
        apply_db_decision(store, provider, item.unit_id, decision)
        if out is not None:
            emit_decision_line(out, item, decision)

    session = ReviewSession(
        items, template=template, allow_overwrite=allow_overwrite, on_decision=on_decision
    )
    server = serve_review(session, port, ui_dir)
    try:
        if on_started is not None:
            on_started(server)
        session.finished.wait()
    finally:
        server.shutdown()
    return session.decided_count()
