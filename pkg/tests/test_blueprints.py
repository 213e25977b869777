"""Blueprint engine: builds, init data, validators, remote procedures."""

from __future__ import annotations

import json

import pytest

from taskforge.blueprints import (
    SharedTaskState,
    StaticTaskBuilder,
    artifacts_equal,
    build_task,
    get_blueprint,
    get_init_data,
    handle_remote_procedure,
    validate_onboarding,
)
from taskforge.entities import UnitStatus, build_assignment_structure
from taskforge.errors import ConfigError, HandlerError, MissingAsset, NotAssigned, UnknownProcedure
from taskforge.store import LocalStore


@pytest.fixture()
def store(tmp_path):
    handle = LocalStore(tmp_path / "data")
    yield handle
    handle.close()


def _run(store, config=None):
    task_id = store.create_record("task", {"name": "t", "task_type": "static"})
    run_id = store.create_record(
        "task_run", {"task_id": task_id, "config": config or {"task": {"task_type": "static"}}}
    )
    return store.get_task_run(run_id)


def test_build_from_html_source(store, tmp_path):
    page = tmp_path / "survey.html"
    page.write_text("<html><body>rate this</body></html>", encoding="utf-8")
    run = _run(
        store,
        {
            "task": {"task_type": "static", "title": "Rate", "description": "d"},
            "blueprint": {"source_path": str(page), "payload_schema": {"rating": "int"}},
        },
    )
    artifact = build_task(StaticTaskBuilder(), run, tmp_path / "build")
    index = (artifact.build_dir / "index.html").read_text(encoding="utf-8")
    assert "rate this" in index
    document = json.loads((artifact.build_dir / "task_config.json").read_text(encoding="utf-8"))
    assert document["task_title"] == "Rate"
    assert document["payload_schema"] == {"rating": "int"}
    assert set(document["features"]) == {"onboarding", "gold", "screening", "tips", "feedback"}


def test_build_missing_source(store, tmp_path):
    run = _run(
        store,
        {"task": {"task_type": "static"}, "blueprint": {"source_path": str(tmp_path / "nope.html")}},
    )
    with pytest.raises(MissingAsset):
        build_task(StaticTaskBuilder(), run, tmp_path / "build")


def test_build_twice_is_idempotent(store, tmp_path):
    run = _run(store)
    first = build_task(StaticTaskBuilder(), run, tmp_path / "b1")
    second = build_task(StaticTaskBuilder(), run, tmp_path / "b2")
    assert artifacts_equal(first, second)
    # and rebuilding in place is equivalent too
    again = build_task(StaticTaskBuilder(), run, tmp_path / "b1")
    assert artifacts_equal(again, second)


def test_build_from_bundle_dir(store, tmp_path):
    bundle = tmp_path / "bundle"
    bundle.mkdir()
    (bundle / "index.html").write_text("<html>app</html>", encoding="utf-8")
    (bundle / "app.js").write_text("console.log(1)", encoding="utf-8")
    run = _run(store, {"task": {"task_type": "static"}, "blueprint": {"source_path": str(bundle)}})
    artifact = build_task(StaticTaskBuilder(), run, tmp_path / "build")
    assert (artifact.build_dir / "app.js").exists()


def _assigned_unit(store, item, kind_fields=None):
    run = _run(store)
    build_assignment_structure(store, run, [item], 1)
    unit = store.find_records("unit", task_run_id=run.id)[0]
    store.update_unit_status(unit.id, UnitStatus.LAUNCHED)
    store.update_unit_status(unit.id, UnitStatus.ASSIGNED)
    return store.get_unit(unit.id)


def test_init_data_pass_through(store):
    unit = _assigned_unit(store, {"image": "a.png"})
    assert get_init_data(store, unit) == {"image": "a.png"}


def test_init_data_requires_assigned(store):
    run = _run(store)
    build_assignment_structure(store, run, [{"x": 1}], 1)
    unit = store.find_records("unit", task_run_id=run.id)[0]
    with pytest.raises(NotAssigned):
        get_init_data(store, unit)


def test_unregistered_task_type_fails_before_build(store, tmp_path):
    run = _run(store, {"task": {"task_type": "no-such-blueprint"}})
    with pytest.raises(ConfigError):
        build_task(StaticTaskBuilder(), run, tmp_path / "build")


def test_onboarding_validator_results():
    shared = SharedTaskState(onboarding_validator=lambda sub: sub.get("answer") == 4)
    assert validate_onboarding(shared, {"answer": 4}) is True
    assert validate_onboarding(shared, {"answer": 5}) is False
    assert validate_onboarding(SharedTaskState(), {"anything": 1}) is True


def test_remote_procedure_echo():
    shared = SharedTaskState(remote_procedures={"echo": lambda args, agent_id: args})
    assert handle_remote_procedure(shared, "echo", {"x": 1}, "a1") == {"x": 1}


def test_remote_procedure_unknown():
    with pytest.raises(UnknownProcedure):
        handle_remote_procedure(SharedTaskState(), "nope", {}, "a1")


def test_remote_procedure_handler_error_then_recovers():
    calls = []

    def flaky(args, agent_id):
        calls.append(args)
        if args.get("boom"):
            raise RuntimeError("kaboom")
        return {"ok": True}

    shared = SharedTaskState(remote_procedures={"flaky": flaky})
    with pytest.raises(HandlerError):
        handle_remote_procedure(shared, "flaky", {"boom": True}, "a1")
    assert handle_remote_procedure(shared, "flaky", {"boom": False}, "a1") == {"ok": True}
    assert len(calls) == 2


def test_shared_state_freeze():
    shared = SharedTaskState(static_extras={"k": 1})
    shared.freeze()
    assert shared.static_extras["k"] == 1
    with pytest.raises(TypeError):
        shared.static_extras["k"] = 2  # type: ignore[index]


def test_registry_contains_shipped_blueprints():
    assert get_blueprint("static").supports_remote_procedures is False
    assert get_blueprint("remote_procedure").supports_remote_procedures is True


def test_required_config_keys_enforced(store, tmp_path):
    from taskforge.blueprints import BlueprintDefinition, StaticTaskRunner, register_blueprint

    register_blueprint(
        BlueprintDefinition(
            task_type="needs-source",
            builder_factory=StaticTaskBuilder,
            runner_factory=StaticTaskRunner,
            agent_state_schema={},
            required_config_keys=("blueprint.source_path",),
        )
    )
    run = _run(store, {"task": {"task_type": "needs-source"}, "blueprint": {}})
    with pytest.raises(ConfigError) as excinfo:
        build_task(StaticTaskBuilder(), run, tmp_path / "build")
    assert "blueprint.source_path" in str(excinfo.value)
