"""Layered configuration: defaults < file < overrides, unknown-key rejection."""

from __future__ import annotations

import pytest

from taskforge.config import DEFAULTS, dig, load_layered_config, resolve_data_root
from taskforge.errors import ConfigError


def test_defaults_resolve_without_inputs():
    tree = load_layered_config(None, [])
    assert tree["task"]["units_per_assignment"] == 1
    assert tree["architect"]["type"] == "local"
    assert tree["provider"]["type"] == "mock"
    assert tree is not DEFAULTS


def test_file_layer_overrides_defaults(tmp_path):
    config = tmp_path / "task.yaml"
    config.write_text(
        "task:\n  name: from-file\n  units_per_assignment: 3\nmixins:\n  gold:\n    enabled: true\n",
        encoding="utf-8",
    )
    tree = load_layered_config(config, [])
    assert tree["task"]["name"] == "from-file"
    assert tree["task"]["units_per_assignment"] == 3
    assert tree["mixins"]["gold"]["enabled"] is True
    # untouched siblings keep their defaults
    assert tree["mixins"]["gold"]["rate"] == 0.2
    assert tree["task"]["pay_amount"] == 0.0


def test_cli_overrides_beat_file(tmp_path):
    config = tmp_path / "task.yaml"
    config.write_text("task:\n  units_per_assignment: 3\n", encoding="utf-8")
    tree = load_layered_config(config, ["task.units_per_assignment=5"])
    assert tree["task"]["units_per_assignment"] == 5


def test_override_values_are_yaml_parsed():
    tree = load_layered_config(
        None,
        [
            "task.units_per_assignment=4",
            "task.tips_enabled=true",
            "task.tags=[a, b]",
            "task.title=Plain words",
        ],
    )
    assert tree["task"]["units_per_assignment"] == 4
    assert tree["task"]["tips_enabled"] is True
    assert tree["task"]["tags"] == ["a", "b"]
    assert tree["task"]["title"] == "Plain words"


def test_unknown_key_suggests_nearest():
    with pytest.raises(ConfigError) as excinfo:
        load_layered_config(None, ["task.unitz=1"])
    assert "units_per_assignment" in str(excinfo.value)
    assert excinfo.value.key == "task.unitz"


def test_unknown_key_in_file_rejected(tmp_path):
    config = tmp_path / "task.yaml"
    config.write_text("task:\n  unitz: 1\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_layered_config(config, [])
    assert "units_per_assignment" in str(excinfo.value)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        load_layered_config(None, ["taskk.name=x"])


def test_open_leaves_accept_arbitrary_content(tmp_path):
    config = tmp_path / "task.yaml"
    config.write_text(
        "blueprint:\n  payload_schema:\n    rating: {type: int, min: 1, max: 5}\n",
        encoding="utf-8",
    )
    tree = load_layered_config(config, [])
    assert tree["blueprint"]["payload_schema"]["rating"]["max"] == 5


def test_resolution_is_deterministic_and_order_independent_within_layer():
    first = load_layered_config(None, ["task.name=a", "task.pay_amount=0.5"])
    second = load_layered_config(None, ["task.pay_amount=0.5", "task.name=a"])
    assert first == second
    assert first == load_layered_config(None, ["task.name=a", "task.pay_amount=0.5"])


def test_bad_override_shape():
    with pytest.raises(ConfigError):
        load_layered_config(None, ["task.name"])
    with pytest.raises(ConfigError):
        load_layered_config(None, ["task=1"])


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_layered_config("/nonexistent/task.yaml", [])


def test_dig():
    tree = {"a": {"b": {"c": 3}}}
    assert dig(tree, "a.b.c") == 3
    assert dig(tree, "a.b.missing", "fallback") == "fallback"
    assert dig(tree, "a.b.c.d", None) is None


def test_resolve_data_root_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv("TASKFORGE_DATA_ROOT", raising=False)
    assert str(resolve_data_root({})) == "taskforge_data"
    monkeypatch.setenv("TASKFORGE_DATA_ROOT", str(tmp_path / "env"))
    assert resolve_data_root({}) == tmp_path / "env"
    assert resolve_data_root({"data_root": str(tmp_path / "cfg")}) == tmp_path / "cfg"
