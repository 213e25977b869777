"""Command-line entry point: run, export, metrics, qualify, feedback, tips,
review, provider-ledger.

Exit codes: 0 success, 2 config error, 3 not found, 4 runtime failure.
"""

from __future__ import annotations

import functools
import importlib
import json
import sys
import threading
from pathlib import Path
from typing import Any

import click

from . import worker_ops
from .blueprints import SharedTaskState
from .config import dig, load_layered_config, resolve_data_root
from .entities import UnitStatus
from .errors import ConfigError, NoReviewableUnits, NotFound, ParseError, TaskforgeError
from .operator import Operator
from .providers import MockProvider, ScriptedWorker, run_scripted_crowd
from .review import DEFAULT_PORT, review_from_db, review_from_stream
from .store import LocalStore

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_FOUND = 3
EXIT_RUNTIME = 4


def _with_exit_codes(func):
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except ConfigError as exc:
            key = f" (key: {exc.key})" if exc.key else ""
            click.echo(f"config error: {exc}{key}", err=True)
            sys.exit(EXIT_CONFIG)
        except (NotFound, NoReviewableUnits) as exc:
            click.echo(f"not found: {exc}", err=True)
            sys.exit(EXIT_NOT_FOUND)
        except ParseError as exc:
            click.echo(f"parse error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)
        except TaskforgeError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)

    return wrapper


@click.group()
@click.option(
    "--data-root",
    type=click.Path(path_type=Path),
    default=None,
    help="Store location (defaults to $TASKFORGE_DATA_ROOT or ./taskforge_data)",
)
@click.pass_context
def main(ctx: click.Context, data_root: Path | None) -> None:
    """Crowdsourcing task orchestration."""
    ctx.obj = {"data_root": data_root}


def _store(ctx: click.Context, tree: dict[str, Any] | None = None) -> LocalStore:
    explicit = ctx.obj.get("data_root")
    if explicit is not None:
        return LocalStore(explicit)
    return LocalStore(resolve_data_root(tree or {}))


def _load_shared(tree: dict[str, Any]) -> SharedTaskState:
    module_name = tree.get("hooks_module")
    if not module_name:
        return SharedTaskState()
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise ConfigError(f"hooks_module {module_name!r} cannot be imported: {exc}",
                          key="hooks_module") from exc
    factory = getattr(module, "get_shared_state", None)
    if factory is None:
        raise ConfigError(
            f"hooks_module {module_name!r} must define get_shared_state()", key="hooks_module"
        )
    shared = factory()
    if not isinstance(shared, SharedTaskState):
        raise ConfigError("get_shared_state() must return a SharedTaskState", key="hooks_module")
    return shared


def _load_items(tree: dict[str, Any]) -> list[Any]:
    items = list(dig(tree, "task.input_items") or [])
    input_file = dig(tree, "task.input_file")
    if input_file:
        path = Path(input_file)
        if not path.exists():
            raise ConfigError(f"task.input_file {path} does not exist", key="task.input_file")
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                items.append(json.loads(line))
    return items


@main.command()
@click.option("--config", "-c", "config_path", type=click.Path(path_type=Path), default=None)
@click.argument("overrides", nargs=-1)
@click.pass_context
@_with_exit_codes
def run(ctx: click.Context, config_path: Path | None, overrides: tuple[str, ...]) -> None:
    """Launch a run and block until it completes (or Ctrl-C drains it)."""
    tree = load_layered_config(config_path, list(overrides))
    store = _store(ctx, tree)
    shared = _load_shared(tree)
    items = _load_items(tree)
    operator = Operator(store)
    handle = None
    try:
        handle = operator.launch_run(tree, shared, items)
        click.echo(f"run {handle.task_run_id} deployed at {handle.url}", err=True)
        scripted = [
            ScriptedWorker.from_config(spec)
            for spec in dig(tree, "provider.scripted_workers") or []
        ]
        if scripted:
            provider = MockProvider(store)
            crowd = threading.Thread(
                target=run_scripted_crowd,
                args=(provider, scripted, handle.channel_url),
                daemon=True,
            )
            crowd.start()
        while not handle.wait_for_completion(timeout=0.2):
            pass
        summary = operator.shutdown_run(handle)
    except KeyboardInterrupt:
        if handle is None:
            # launch_run already rolled back (server down, units expired)
            click.echo("interrupted during launch; rolled back", err=True)
            sys.exit(EXIT_RUNTIME)
        click.echo("interrupted; draining", err=True)
        summary = operator.shutdown_run(handle, force=False)
    click.echo(json.dumps(summary, indent=2))
    sys.exit(EXIT_OK)


@main.command()
@click.argument("task_run_id")
@click.option("--out", "-o", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--include-qa", is_flag=True, help="Include gold/screening units")
@click.pass_context
@_with_exit_codes
def export(ctx: click.Context, task_run_id: str, out_path: Path, include_qa: bool) -> None:
    """Write a run's collected data as line-delimited records."""
    store = _store(ctx)
    lines = store.export_run_lines(task_run_id, include_qa=include_qa)
    out_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    click.echo(f"wrote {len(lines)} records to {out_path}")


@main.command()
@click.argument("task_run_id")
@click.pass_context
@_with_exit_codes
def metrics(ctx: click.Context, task_run_id: str) -> None:
    """Print the latest metrics snapshot for a run."""
    store = _store(ctx)
    store.get_task_run(task_run_id)
    metrics_path = store.data_root / "runs" / task_run_id / "metrics.jsonl"
    if metrics_path.exists():
        last = metrics_path.read_text(encoding="utf-8").splitlines()[-1]
        snapshot = json.loads(last)
    else:
        # no tick ever ran for this run; synthesize a snapshot from the store
        histogram = {status.value: 0 for status in UnitStatus}
        for unit in store.find_records("unit", task_run_id=task_run_id):
            histogram[unit.status.value] += 1
        done = sum(
            histogram[s] for s in ("completed", "accepted", "rejected", "soft_rejected")
        )
        snapshot = {
            "timestamp": None,
            "counters": {
                "units_launched": done + histogram["expired"] + histogram["launched"]
                + histogram["assigned"],
                "units_completed": done,
                "units_expired": histogram["expired"],
                "agents_active": 0,
            },
            "unit_status_histogram": histogram,
        }
    click.echo(json.dumps(snapshot, indent=2))


@main.group()
def qualify() -> None:
    """Grant, revoke, and list worker qualifications."""


def _find_worker(store: LocalStore, worker_name: str, provider_type: str):
    workers = store.find_records("worker", worker_name=worker_name, provider_type=provider_type)
    if not workers:
        raise NotFound("worker", f"{worker_name} ({provider_type})")
    return workers[0]


@qualify.command("grant")
@click.argument("worker_name")
@click.argument("qualification_name")
@click.option("--value", default=1, type=int)
@click.option("--provider", "provider_type", default="mock")
@click.pass_context
@_with_exit_codes
def qualify_grant(
    ctx: click.Context, worker_name: str, qualification_name: str, value: int, provider_type: str
) -> None:
    store = _store(ctx)
    worker = _find_worker(store, worker_name, provider_type)
    worker_ops.grant(store, worker, qualification_name, value)
    click.echo(f"granted {qualification_name}={value} to {worker_name}")


@qualify.command("revoke")
@click.argument("worker_name")
@click.argument("qualification_name")
@click.option("--provider", "provider_type", default="mock")
@click.pass_context
@_with_exit_codes
def qualify_revoke(
    ctx: click.Context, worker_name: str, qualification_name: str, provider_type: str
) -> None:
    store = _store(ctx)
    worker = _find_worker(store, worker_name, provider_type)
    worker_ops.revoke(store, worker, qualification_name)
    click.echo(f"revoked {qualification_name} from {worker_name}")


@qualify.command("list")
@click.argument("worker_name")
@click.option("--provider", "provider_type", default="mock")
@click.pass_context
@_with_exit_codes
def qualify_list(ctx: click.Context, worker_name: str, provider_type: str) -> None:
    store = _store(ctx)
    worker = _find_worker(store, worker_name, provider_type)
    for grant in store.find_records("granted_qualification", worker_id=worker.id):
        click.echo(f"{grant.qualification_name}={grant.value}")


@main.group()
def feedback() -> None:
    """Inspect and review worker feedback."""


def _task_by_name(store: LocalStore, task_name: str):
    tasks = store.find_records("task", name=task_name)
    if not tasks:
        raise NotFound("task", task_name)
    return tasks[0]


@feedback.command("list")
@click.argument("task_name")
@click.option("--reviewed/--unreviewed", "reviewed", default=None)
@click.option("--category", default=None)
@click.pass_context
@_with_exit_codes
def feedback_list(
    ctx: click.Context, task_name: str, reviewed: bool | None, category: str | None
) -> None:
    store = _store(ctx)
    task = _task_by_name(store, task_name)
    for entry in worker_ops.list_feedback(store, task.id, reviewed=reviewed, category=category):
        click.echo(
            json.dumps(
                {
                    "id": entry.id,
                    "agent_id": entry.agent_id,
                    "text": entry.text,
                    "category": entry.category,
                    "reviewed": entry.reviewed,
                    "bonus_sent": str(entry.bonus_sent) if entry.bonus_sent else None,
                }
            )
        )


@main.group()
def tips() -> None:
    """List and moderate worker tips."""


@tips.command("list")
@click.argument("task_name")
@click.pass_context
@_with_exit_codes
def tips_list(ctx: click.Context, task_name: str) -> None:
    store = _store(ctx)
    task = _task_by_name(store, task_name)
    for tip in store.find_tips_for_task(task.id):
        click.echo(json.dumps({"id": tip.id, "header": tip.header, "status": tip.status.value}))


@tips.command("moderate")
@click.argument("tip_id")
@click.argument("decision", type=click.Choice(["accept", "reject"]))
@click.pass_context
@_with_exit_codes
def tips_moderate(ctx: click.Context, tip_id: str, decision: str) -> None:
    store = _store(ctx)
    tip = worker_ops.moderate_tip(store, tip_id, decision)
    click.echo(f"tip {tip.id} {tip.status.value}")


@main.command()
@click.option("--json", "json_template", default=None,
              help="Review records piped on stdin, rendered with this template")
@click.option("--stdout", "to_stdout", is_flag=True, help="Emit decision lines on stdout")
@click.option("--db", "db_task", default=None, help="Review a task's COMPLETED units")
@click.argument("template", required=False)
@click.option("--port", default=DEFAULT_PORT, type=int)
@click.option("--allow-overwrite", is_flag=True)
@click.option("--ui-dir", type=click.Path(path_type=Path), default=None,
              help="Serve a reviewer web client from this directory")
@click.pass_context
@_with_exit_codes
def review(
    ctx: click.Context,
    json_template: str | None,
    to_stdout: bool,
    db_task: str | None,
    template: str | None,
    port: int,
    allow_overwrite: bool,
    ui_dir: Path | None,
) -> None:
    """Review piped records (--json) or a finished task's units (--db)."""
    if (json_template is None) == (db_task is None):
        raise ConfigError("pass exactly one of --json <template> or --db <task-name>")

    def announce(server) -> None:
        click.echo(f"review server on http://127.0.0.1:{server.port}", err=True)

    if json_template is not None:
        out = sys.stdout if to_stdout else sys.stderr
        decided = review_from_stream(
            sys.stdin,
            out,
            template=json_template,
            port=port,
            allow_overwrite=allow_overwrite,
            ui_dir=ui_dir,
            on_started=announce,
        )
    else:
        store = _store(ctx)
        decided = review_from_db(
            store,
            db_task,
            provider=MockProvider(store),
            template=template or "json-pretty",
            port=port,
            allow_overwrite=allow_overwrite,
            ui_dir=ui_dir,
            out=sys.stdout if to_stdout else None,
            on_started=announce,
        )
    click.echo(f"review finished: {decided} decisions", err=True)


@main.command("provider-ledger")
@click.option("--run", "run_id", default=None)
@click.pass_context
@_with_exit_codes
def provider_ledger(ctx: click.Context, run_id: str | None) -> None:
    """Dump the mock provider's action ledger as line-delimited records."""
    store = _store(ctx)
    if run_id is not None:
        store.get_task_run(run_id)
    for entry in MockProvider(store).read_ledger(run_id):
        click.echo(json.dumps(entry, ensure_ascii=False))


if __name__ == "__main__":
    main()
