"""Review service: stream review over HTTP, DB review, renderers."""

from __future__ import annotations

import io
import json
import threading
import urllib.request
from decimal import Decimal

import pytest

from taskforge.entities import AgentStatus, UnitStatus, build_assignment_structure
from taskforge.errors import NoReviewableUnits, ParseError, UnknownTemplate
from taskforge.providers import MockProvider
from taskforge.review import (
    ReviewDecision,
    Verdict,
    parse_stream,
    render_template,
    review_from_db,
    review_from_stream,
)
from taskforge.store import AgentStatePayload, LocalStore


def test_word_cloud_token_oracle():
    # hand-countable: "the" twice, "cat" and "dog" once each
    descriptor = render_template(["the cat", "the dog"], "word-cloud")
    assert descriptor["tokens"] == [["the", 2], ["cat", 1], ["dog", 1]]


def test_word_cloud_collects_nested_strings_case_folded():
    data = {"a": "The THE", "b": {"c": ["the", 5, None]}}
    descriptor = render_template(data, "word-cloud")
    assert descriptor["tokens"] == [["the", 3]]


def test_json_pretty_empty():
    assert render_template({}, "json-pretty")["pretty"] == "{}"


def test_unknown_template():
    with pytest.raises(UnknownTemplate):
        render_template({}, "nope")


def test_parse_stream_reports_bad_line():
    with pytest.raises(ParseError) as excinfo:
        parse_stream(['{"ok": 1}\n', "{broken\n", '{"ok": 2}\n'])
    assert excinfo.value.line_number == 2


def _post(url: str, payload: dict) -> tuple[int, dict]:
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(request, timeout=5) as response:
            return response.status, json.loads(response.read())
    except urllib.error.HTTPError as error:
        return error.code, json.loads(error.read())


def _get(url: str) -> dict:
    with urllib.request.urlopen(url, timeout=5) as response:
        return json.loads(response.read())


def _run_stream_review(lines, **kwargs):
    out = io.StringIO()
    started = threading.Event()
    box = {}

    def on_started(server):
        box["port"] = server.port
        started.set()

    worker = threading.Thread(
        target=lambda: box.update(
            decided=review_from_stream(lines, out, port=0, on_started=on_started, **kwargs)
        ),
        daemon=True,
    )
    worker.start()
    assert started.wait(5)
    return worker, out, box


def test_stream_review_round_trip():
    lines = ['{"text": "the cat"}', '{"text":   "spaced"}', '{"n": 3}']
    worker, out, box = _run_stream_review(list(lines))
    base = f"http://127.0.0.1:{box['port']}"
    assert _get(base + "/api/items/count") == {"count": 3, "decided": 0}
    item = _get(base + "/api/items/1")
    assert item["data"] == {"text": "spaced"}
    assert item["rendered"]["template"] == "json-pretty"
    for index in range(3):
        status, _ = _post(base + f"/api/items/{index}/decision", {"verdict": "approve"})
        assert status == 200
    worker.join(timeout=5)
    assert not worker.is_alive()
    assert box["decided"] == 3
    emitted = out.getvalue().splitlines()
    assert len(emitted) == 3
    for line, raw in zip(emitted, lines):
        parsed = json.loads(line)
        assert parsed["decision"]["verdict"] == "approve"
        # the data field is byte-identical to the input line
        assert f'"data": {raw},' in line
    assert [json.loads(line)["index"] for line in emitted] == [0, 1, 2]


def test_stream_review_empty_input_exits_cleanly():
    out = io.StringIO()
    decided = review_from_stream([], out, port=0)
    assert decided == 0
    assert out.getvalue() == ""


def test_stream_review_double_decision_conflict():
    worker, out, box = _run_stream_review(['{"x": 1}', '{"x": 2}'])
    base = f"http://127.0.0.1:{box['port']}"
    status, _ = _post(base + "/api/items/0/decision", {"verdict": "approve"})
    assert status == 200
    status, payload = _post(base + "/api/items/0/decision", {"verdict": "reject"})
    assert status == 409
    status, _ = _post(base + "/api/items/1/decision", {"verdict": "reject"})
    worker.join(timeout=5)


def test_stream_review_overwrite_allowed():
    worker, out, box = _run_stream_review(['{"x": 1}', '{"x": 2}'], allow_overwrite=True)
    base = f"http://127.0.0.1:{box['port']}"
    assert _post(base + "/api/items/0/decision", {"verdict": "approve"})[0] == 200
    assert _post(base + "/api/items/0/decision", {"verdict": "reject"})[0] == 200
    assert _post(base + "/api/items/1/decision", {"verdict": "approve"})[0] == 200
    worker.join(timeout=5)
    # conservation: one emitted line per decided item, not per decision
    assert len(out.getvalue().splitlines()) == 2


def test_stream_review_rejects_bad_decision():
    worker, out, box = _run_stream_review(['{"x": 1}'])
    base = f"http://127.0.0.1:{box['port']}"
    status, _ = _post(base + "/api/items/0/decision", {"verdict": "maybe"})
    assert status == 400
    status, _ = _post(base + "/api/items/0/decision", {"verdict": "approve", "bonus": -2})
    assert status == 400
    status, _ = _post(base + "/api/finish", {})
    assert status == 200
    worker.join(timeout=5)


def test_decision_validation():
    with pytest.raises(ValueError):
        ReviewDecision(verdict=Verdict.APPROVE, bonus=Decimal("0"))
    decision = ReviewDecision.from_dict(
        {"verdict": "approve", "bonus": "0.25", "qualifications_to_grant": [["trusted", 1]]}
    )
    assert decision.bonus == Decimal("0.25")
    assert decision.qualifications_to_grant == (("trusted", 1),)


# -- DB review ------------------------------------------------------------------


@pytest.fixture()
def store(tmp_path):
    handle = LocalStore(tmp_path / "data")
    yield handle
    handle.close()


def _finished_run(store, n_units=4, task_name="review-me"):
    task_id = store.create_record("task", {"name": task_name, "task_type": "static"})
    run = store.get_task_run(store.create_record("task_run", {"task_id": task_id, "config": {}}))
    assignments = build_assignment_structure(
        store, run, [{"q": i} for i in range(n_units)], 1
    )
    for i, assignment in enumerate(assignments):
        unit = store.find_records("unit", assignment_id=assignment.id)[0]
        store.update_unit_status(unit.id, UnitStatus.LAUNCHED)
        store.update_unit_status(unit.id, UnitStatus.ASSIGNED)
        worker = store.ensure_worker(f"rw{i}", "mock")
        agent_id = store.create_record("agent", {"worker_id": worker.id, "unit_id": unit.id})
        store.update_agent_status(agent_id, AgentStatus.IN_TASK)
        store.save_agent_state(
            agent_id,
            AgentStatePayload(inputs=assignment.input_item, outputs={"label": i},
                              times={"task_start": 1, "task_end": 2}),
            partial=False,
        )
        store.update_unit_status(unit.id, UnitStatus.COMPLETED)
        store.update_agent_status(agent_id, AgentStatus.SUBMITTED)
    return run


def _drive_db_review(store, task_name, decide, provider=None, **kwargs):
    started = threading.Event()
    box = {}

    def on_started(server):
        box["port"] = server.port
        started.set()

    worker = threading.Thread(
        target=lambda: box.update(
            decided=review_from_db(
                store, task_name, provider=provider, port=0, on_started=on_started, **kwargs
            )
        ),
        daemon=True,
    )
    worker.start()
    assert started.wait(5)
    decide(f"http://127.0.0.1:{box['port']}")
    worker.join(timeout=10)
    assert not worker.is_alive()
    return box


def test_db_review_approve_all(store):
    run = _finished_run(store, n_units=4)

    def decide(base):
        count = _get(base + "/api/items/count")["count"]
        assert count == 4
        for index in range(count):
            assert _post(base + f"/api/items/{index}/decision", {"verdict": "approve"})[0] == 200

    _drive_db_review(store, "review-me", decide)
    units = store.find_records("unit", task_run_id=run.id)
    assert all(u.status is UnitStatus.ACCEPTED for u in units)
    agents = store.find_records("agent", task_run_id=run.id)
    assert all(a.status is AgentStatus.APPROVED for a in agents)


def test_db_review_reject_isolated(store):
    run = _finished_run(store, n_units=3)

    def decide(base):
        _post(base + "/api/items/0/decision", {"verdict": "reject"})
        _post(base + "/api/items/1/decision", {"verdict": "approve"})
        _post(base + "/api/items/2/decision", {"verdict": "soft_reject"})

    _drive_db_review(store, "review-me", decide)
    units = store.find_records("unit", task_run_id=run.id)
    assert [u.status for u in units] == [
        UnitStatus.REJECTED,
        UnitStatus.ACCEPTED,
        UnitStatus.SOFT_REJECTED,
    ]


def test_db_review_bonus_and_qualification(store):
    _finished_run(store, n_units=1)
    provider = MockProvider(store)

    def decide(base):
        _post(
            base + "/api/items/0/decision",
            {
                "verdict": "approve",
                "bonus": "0.25",
                "qualifications_to_grant": [["trusted", 1]],
                "feedback_to_worker": "nice work",
            },
        )

    _drive_db_review(store, "review-me", decide, provider=provider)
    ledger = provider.read_ledger()
    assert any(e["kind"] == "bonus" and e["amount"] == "0.25" for e in ledger)
    assert any(e["kind"] == "message" for e in ledger)
    worker = store.find_records("worker", worker_name="rw0")[0]
    assert store.get_granted_value(worker.id, "trusted") == 1


def test_db_review_requires_completed_units(store):
    with pytest.raises(NoReviewableUnits):
        review_from_db(store, "never-existed")
    _finished_run(store, n_units=1, task_name="done-task")

    def decide(base):
        _post(base + "/api/items/0/decision", {"verdict": "approve"})

    _drive_db_review(store, "done-task", decide)
    # everything reviewed: a second pass has nothing to serve
    with pytest.raises(NoReviewableUnits):
        review_from_db(store, "done-task")
