"""The blueprint abstraction: what a task saves, how its server-side flow
runs, what gets built for serving, and the live state shared across units.

Two blueprints ship: `static` (single-turn: show data, collect a result)
and `remote_procedure` (static plus backend calls the client can make
mid-task).
"""

from __future__ import annotations

import filecmp
import json
import logging
import shutil
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Mapping, Protocol

from .config import dig
from .entities import TaskRun, Unit, UnitStatus
from .errors import ConfigError, HandlerError, MissingAsset, NotAssigned, UnknownProcedure
from .store import LocalStore

logger = logging.getLogger(__name__)

TASK_CONFIG_NAME = "task_config.json"


class UnitOutcome(str, Enum):
    COMPLETE = "complete"
    TIMEOUT = "timeout"
    DISCONNECT = "disconnect"
    RETURNED = "returned"


@dataclass
class SharedTaskState:
    """Live, in-process state shared by every unit of a run.

    Hooks may read the store but never write it. static_extras is frozen at
    launch; handlers must tolerate concurrent invocation.
    """

    onboarding_validator: Callable[[Any], bool] | None = None
    submission_validator: Callable[[Any], bool] | None = None
    worker_eligibility_hook: Callable[[Any], bool] | None = None
    remote_procedures: dict[str, Callable[[Any, str], Any]] = field(default_factory=dict)
    static_extras: Mapping[str, Any] = field(default_factory=dict)
    # Callables the quality mixins need at runtime; config files carry only data.
    screening_validator: Callable[[Any], bool] | None = None
    gold_comparator: Callable[[Any, Any], bool] | None = None

    def freeze(self) -> None:
        self.static_extras = MappingProxyType(dict(self.static_extras))


@dataclass(frozen=True)
class TaskBuildArtifact:
    """A self-contained directory the architect can serve as-is."""

    build_dir: Path


class RunnableAgent(Protocol):
    """What a TaskRunner needs from the live agent handle."""

    agent_id: str

    def await_outcome(self, timeout: float) -> tuple[str, Any]: ...

    def finalize_submission(self, outputs: Any) -> None: ...

    def abandon(self, cause: str) -> None: ...


class TaskBuilder:
    """Builds everything the architect must serve for one run."""

    def build(self, run: TaskRun, out_dir: Path) -> TaskBuildArtifact:
        raise NotImplementedError


_DEFAULT_INDEX = """<!doctype html>
<html>
  <head><meta charset="utf-8"><title>Task</title></head>
  <body>
    <div id="root">This task is driven by the generic client; it reads
    task_config.json and speaks to /channel.</div>
    <script type="module" src="app.js"></script>
  </body>
</html>
"""


def _task_config_document(run: TaskRun) -> dict[str, Any]:
    config = run.config
    return {
        "task_title": dig(config, "task.title", "Untitled task"),
        "task_description": dig(config, "task.description", ""),
        "payload_schema": dig(config, "blueprint.payload_schema", {}),
        "features": {
            "onboarding": bool(dig(config, "mixins.onboarding.enabled", False)),
            "gold": bool(dig(config, "mixins.gold.enabled", False)),
            "screening": bool(dig(config, "mixins.screening.enabled", False)),
            "tips": bool(dig(config, "task.tips_enabled", False)),
            "feedback": bool(dig(config, "task.feedback_enabled", False)),
        },
    }


class StaticTaskBuilder(TaskBuilder):
    """Copies the configured front-end (a plain .html file or a prebuilt
    bundle directory) into the build dir and writes the task config document.
    With no source configured, a minimal built-in page is used."""

    def build(self, run: TaskRun, out_dir: Path) -> TaskBuildArtifact:
        source = dig(run.config, "blueprint.source_path")
        if out_dir.exists():
            shutil.rmtree(out_dir)
        out_dir.mkdir(parents=True)
        if source is not None:
            source_path = Path(source)
            if not source_path.exists():
                raise MissingAsset(f"front-end source {source_path} not found")
            if source_path.is_dir():
                shutil.copytree(source_path, out_dir, dirs_exist_ok=True)
                if not (out_dir / "index.html").exists():
                    raise MissingAsset(f"bundle {source_path} has no index.html")
            else:
                shutil.copyfile(source_path, out_dir / "index.html")
        else:
            (out_dir / "index.html").write_text(_DEFAULT_INDEX, encoding="utf-8")
        document = _task_config_document(run)
        (out_dir / TASK_CONFIG_NAME).write_text(
            json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return TaskBuildArtifact(build_dir=out_dir)


def build_task(builder: TaskBuilder, run: TaskRun, build_root: Path) -> TaskBuildArtifact:
    """Validate the run config against the blueprint's required keys, then
    build. Rebuilding yields an equivalent artifact."""
    definition = get_blueprint(dig(run.config, "task.task_type", "static"))
    for key in definition.required_config_keys:
        if dig(run.config, key) is None:
            raise ConfigError(f"blueprint {definition.task_type!r} requires config key {key!r}",
                              key=key)
    return builder.build(run, build_root)


def artifacts_equal(a: TaskBuildArtifact, b: TaskBuildArtifact) -> bool:
    comparison = filecmp.dircmp(a.build_dir, b.build_dir)

    def clean(node: filecmp.dircmp) -> bool:
        if node.left_only or node.right_only or node.diff_files or node.funny_files:
            return False
        return all(clean(sub) for sub in node.subdirs.values())

    return clean(comparison)


def get_init_data(store: LocalStore, unit: Unit) -> Any:
    """The payload shown to the worker: the assignment's input item. QA units
    live on their own single-unit assignments whose input item is the
    configured gold/screening payload, so this is uniform."""
    if unit.status is not UnitStatus.ASSIGNED:
        raise NotAssigned(f"unit {unit.id} is {unit.status.value}, not assigned")
    return store.get_assignment(unit.assignment_id).input_item


def validate_onboarding(shared: SharedTaskState, submission: Any) -> bool:
    if shared.onboarding_validator is None:
        return True
    return bool(shared.onboarding_validator(submission))


def validate_submission(shared: SharedTaskState, submission: Any) -> bool:
    if shared.submission_validator is None:
        return True
    return bool(shared.submission_validator(submission))


def handle_remote_procedure(
    shared: SharedTaskState, name: str, args: Any, agent_id: str
) -> Any:
    """Dispatch one backend call for an in-task agent."""
    if name not in shared.remote_procedures:
        raise UnknownProcedure(f"no remote procedure named {name!r}")
    handler = shared.remote_procedures[name]
    try:
        return handler(args, agent_id)
    except Exception as exc:
        raise HandlerError(str(exc)) from exc


class TaskRunner:
    """Back-end logic executing one unit per agent; instances are per-run."""

    def __init__(self, assignment_duration: float, shared: SharedTaskState) -> None:
        self.assignment_duration = assignment_duration
        self.shared = shared

    def run_unit(self, agent: RunnableAgent) -> UnitOutcome:
        raise NotImplementedError


class StaticTaskRunner(TaskRunner):
    """Single-turn flow: block until the agent submits, times out, returns
    the unit, or disconnects."""

    def run_unit(self, agent: RunnableAgent) -> UnitOutcome:
        try:
            cause, payload = agent.await_outcome(self.assignment_duration)
        except Exception:
            logger.exception("runner failure for agent %s", agent.agent_id)
            agent.abandon("disconnect")
            return UnitOutcome.DISCONNECT
        if cause == "submit":
            agent.finalize_submission(payload)
            return UnitOutcome.COMPLETE
        agent.abandon(cause)
        if cause == "timeout":
            return UnitOutcome.TIMEOUT
        if cause == "return":
            return UnitOutcome.RETURNED
        return UnitOutcome.DISCONNECT


class RemoteProcedureTaskRunner(StaticTaskRunner):
    """Same single-turn flow; remote-procedure packets are answered by the
    coordinator through handle_remote_procedure while the unit is live."""


@dataclass(frozen=True)
class BlueprintDefinition:
    task_type: str
    builder_factory: Callable[[], TaskBuilder]
    runner_factory: Callable[[float, SharedTaskState], TaskRunner]
    agent_state_schema: dict[str, Any]
    required_config_keys: tuple[str, ...] = ()
    supports_remote_procedures: bool = False


_REGISTRY: dict[str, BlueprintDefinition] = {}


def register_blueprint(definition: BlueprintDefinition) -> None:
    if definition.task_type in _REGISTRY:
        raise ConfigError(f"blueprint {definition.task_type!r} already registered")
    _REGISTRY[definition.task_type] = definition


def get_blueprint(task_type: str) -> BlueprintDefinition:
    if task_type not in _REGISTRY:
        raise ConfigError(f"no blueprint registered for task_type {task_type!r}")
    return _REGISTRY[task_type]


def registered_blueprints() -> list[str]:
    return sorted(_REGISTRY)


register_blueprint(
    BlueprintDefinition(
        task_type="static",
        builder_factory=StaticTaskBuilder,
        runner_factory=StaticTaskRunner,
        agent_state_schema={"inputs": "assignment input item", "outputs": "submitted form payload"},
    )
)

register_blueprint(
    BlueprintDefinition(
        task_type="remote_procedure",
        builder_factory=StaticTaskBuilder,
        runner_factory=RemoteProcedureTaskRunner,
        agent_state_schema={"inputs": "assignment input item", "outputs": "submitted form payload"},
        supports_remote_procedures=True,
    )
)
