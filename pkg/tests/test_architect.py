"""LocalArchitect: HTTP serving, channel transport, heartbeat verdicts."""

from __future__ import annotations

import json
import socket
import urllib.error
import urllib.request

import pytest
from websockets.sync.client import connect as ws_connect

from taskforge.architects import (
    HeartbeatVerdict,
    LocalArchitect,
    get_architect_factory,
    heartbeat_monitor,
)
from taskforge.blueprints import TaskBuildArtifact
from taskforge.channel import PacketType, decode_packet, make_packet
from taskforge.errors import BuildMissing, PortInUse


@pytest.fixture()
def artifact(tmp_path):
    build = tmp_path / "build"
    build.mkdir()
    (build / "index.html").write_text("<html>task page</html>", encoding="utf-8")
    (build / "task_config.json").write_text(json.dumps({"task_title": "T"}), encoding="utf-8")
    return TaskBuildArtifact(build_dir=build)


def _get(url):
    with urllib.request.urlopen(url, timeout=5) as response:
        return response.status, response.read()


def test_deploy_serves_files_and_config(artifact):
    received = []
    architect = LocalArchitect(port=0, on_packet=lambda c, p: received.append(p))
    architect.prepare(artifact)
    url = architect.deploy()
    try:
        status, body = _get(url + "/task_config.json")
        assert status == 200 and json.loads(body) == {"task_title": "T"}
        status, body = _get(url + "/")
        assert status == 200 and b"task page" in body
        status, _ = _get(url + "/index.html")
        assert status == 200
        with pytest.raises(urllib.error.HTTPError):
            _get(url + "/missing.js")
    finally:
        architect.shutdown()


def test_deploy_requires_prepare(artifact):
    architect = LocalArchitect(port=0)
    with pytest.raises(BuildMissing):
        architect.deploy()


def test_prepare_requires_index(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(BuildMissing):
        LocalArchitect(port=0).prepare(TaskBuildArtifact(build_dir=empty))


def test_deploy_on_occupied_port(artifact):
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        architect = LocalArchitect(port=port)
        architect.prepare(artifact)
        with pytest.raises(PortInUse):
            architect.deploy()
    finally:
        blocker.close()


def test_shutdown_then_get_refused(artifact):
    architect = LocalArchitect(port=0)
    architect.prepare(artifact)
    url = architect.deploy()
    architect.shutdown()
    architect.shutdown()  # idempotent
    with pytest.raises((urllib.error.URLError, ConnectionError, OSError)):
        _get(url + "/")


def test_channel_round_trip_and_malformed_packet(artifact):
    inbound = []

    def on_packet(conn_id, packet):
        inbound.append(packet)
        architect.send(conn_id, make_packet(PacketType.ALIVE, "", {"ok": True}))

    architect = LocalArchitect(port=0, on_packet=on_packet)
    architect.prepare(artifact)
    architect.deploy()
    try:
        with ws_connect(architect.channel_url) as ws:
            ws.send("this is not json")
            error = decode_packet(ws.recv(timeout=5))
            assert error.packet_type is PacketType.ERROR_LOG
            # connection survived the malformed packet
            ws.send(make_packet(PacketType.ALIVE, "", {}).encode())
            reply = decode_packet(ws.recv(timeout=5))
            assert reply.packet_type is PacketType.ALIVE
        assert [p.packet_type for p in inbound] == [PacketType.ALIVE]
    finally:
        architect.shutdown()


def test_disconnect_callback_fires(artifact):
    gone = []
    architect = LocalArchitect(port=0, on_disconnect=gone.append)
    architect.prepare(artifact)
    architect.deploy()
    try:
        with ws_connect(architect.channel_url) as ws:
            ws.send(make_packet(PacketType.ALIVE, "", {}).encode())
        import time

        deadline = time.monotonic() + 5
        while not gone and time.monotonic() < deadline:
            time.sleep(0.01)
        assert len(gone) == 1
    finally:
        architect.shutdown()


def test_path_traversal_blocked(artifact, tmp_path):
    secret = tmp_path / "secret.txt"
    secret.write_text("shh", encoding="utf-8")
    architect = LocalArchitect(port=0)
    architect.prepare(artifact)
    url = architect.deploy()
    try:
        with pytest.raises(urllib.error.HTTPError) as excinfo:
            _get(url + "/../secret.txt")
        assert excinfo.value.code == 404
    finally:
        architect.shutdown()


def test_heartbeat_verdicts():
    assert heartbeat_monitor(last_seen=99.0, now=100.0, heartbeat_timeout=30.0) is HeartbeatVerdict.OK
    assert heartbeat_monitor(last_seen=69.0, now=100.0, heartbeat_timeout=30.0) is HeartbeatVerdict.TIMEOUT
    # exactly at the allowance is still OK
    assert heartbeat_monitor(last_seen=70.0, now=100.0, heartbeat_timeout=30.0) is HeartbeatVerdict.OK


def test_registry_has_local():
    assert get_architect_factory("local") is not None
