"""Layered run configuration: built-in defaults < config file < CLI overrides.

The defaults tree below is also the schema: any key outside it is rejected,
with the nearest known key suggested. Leaves whose default is a list, None,
or an empty dict are open (arbitrary content); non-empty dict defaults are
structural and recursed into.
"""

from __future__ import annotations

import copy
import difflib
import os
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

ENV_DATA_ROOT = "TASKFORGE_DATA_ROOT"
DEFAULT_DATA_ROOT = "taskforge_data"

DEFAULTS: dict[str, Any] = {
    "data_root": None,
    "hooks_module": None,
    "task": {
        "name": "untitled-task",
        "title": "Untitled task",
        "description": "",
        "tags": [],
        "task_type": "static",
        "input_items": [],
        "input_file": None,
        "units_per_assignment": 1,
        "pay_amount": 0.0,
        "maximum_units_per_worker": 0,
        "assignment_duration": 600.0,
        "allowed_concurrent_per_worker": 1,
        "qualifications": [],
        "tips_enabled": False,
        "feedback_enabled": False,
    },
    "architect": {
        "type": "local",
        "port": 0,
        "heartbeat_interval": 5.0,
        "heartbeat_timeout": 30.0,
        "submission_ack_timeout": 10.0,
        "monitor_interval": 1.0,
    },
    "provider": {
        "type": "mock",
        "scripted_workers": [],
    },
    "blueprint": {
        "source_path": None,
        "payload_schema": {},
    },
    "mixins": {
        "onboarding": {
            "enabled": False,
            "qualification_name": "onboarding",
            "payload": None,
        },
        "gold": {
            "enabled": False,
            "items": [],
            "rate": 0.2,
            "min_golds_before_judgement": 3,
            "min_accuracy": 0.7,
            "qualification_name": "gold",
        },
        "screening": {
            "enabled": False,
            "items": [],
            "max_units": -1,
            "passed_qualification_name": "screening-passed",
            "blocked_qualification_name": "screening-blocked",
        },
    },
}


def _is_structural(default_value: Any) -> bool:
    return isinstance(default_value, dict) and bool(default_value)


def _nearest_key(key: str, candidates: list[str]) -> str | None:
    best, best_score = None, 0.0
    for candidate in candidates:
        ratio = difflib.SequenceMatcher(None, key, candidate).ratio()
        prefix = os.path.commonprefix([key, candidate])
        score = max(ratio, len(prefix) / max(len(key), 1))
        if score > best_score:
            best, best_score = candidate, score
    return best if best_score >= 0.5 else None


def _reject_unknown(key_path: str, candidates: list[str]) -> None:
    suggestion = _nearest_key(key_path.rsplit(".", 1)[-1], candidates)
    hint = f" (did you mean {suggestion!r}?)" if suggestion else ""
    raise ConfigError(f"unknown config key {key_path!r}{hint}", key=key_path)


def _merge(defaults: dict[str, Any], incoming: dict[str, Any], prefix: str) -> dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in incoming.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in defaults:
            _reject_unknown(path, list(defaults.keys()))
        if _is_structural(defaults[key]):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a mapping", key=path)
            merged[key] = _merge(defaults[key], value, path)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _apply_override(tree: dict[str, Any], dotted: str, raw_value: str) -> None:
    try:
        value = yaml.safe_load(raw_value)
    except yaml.YAMLError:
        value = raw_value
    parts = dotted.split(".")
    node, schema = tree, DEFAULTS
    for i, part in enumerate(parts[:-1]):
        path = ".".join(parts[: i + 1])
        if part not in schema:
            _reject_unknown(path, list(schema.keys()))
        if not _is_structural(schema[part]):
            raise ConfigError(f"config key {path!r} has no sub-keys", key=path)
        node, schema = node[part], schema[part]
    leaf = parts[-1]
    if leaf not in schema:
        _reject_unknown(dotted, list(schema.keys()))
    if _is_structural(schema[leaf]):
        raise ConfigError(f"config key {dotted!r} is a section, not a value", key=dotted)
    node[leaf] = value


def load_layered_config(
    config_path: str | Path | None = None, overrides: list[str] | None = None
) -> dict[str, Any]:
    """Resolve the full config tree. Overrides use `dotted.key=value` with
    YAML-parsed values; resolution order is defaults < file < overrides."""
    tree = copy.deepcopy(DEFAULTS)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        tree = _merge(tree, loaded, "")
    for override in overrides or []:
        if "=" not in override:
            raise ConfigError(f"override {override!r} must look like key=value")
        dotted, raw_value = override.split("=", 1)
        _apply_override(tree, dotted.strip(), raw_value)
    return tree


def dig(tree: dict[str, Any], dotted: str, default: Any = None) -> Any:
    node: Any = tree
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def resolve_data_root(tree: dict[str, Any]) -> Path:
    configured = tree.get("data_root")
    if configured:
        return Path(configured)
    env = os.environ.get(ENV_DATA_ROOT)
    if env:
        return Path(env)
    return Path(DEFAULT_DATA_ROOT)
