"""Server lifecycle (prepare/deploy/shutdown) and the shipped LocalArchitect.

Architects are deliberately dumb transports: they serve the built artifact,
accept channel connections, and shuttle packets to and from the coordinator.
All pairing and business logic lives in the operator.
"""

from __future__ import annotations

import errno
import logging
import mimetypes
import threading
import uuid
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from websockets.datastructures import Headers
from websockets.http11 import Request, Response
from websockets.sync.server import Server, ServerConnection, serve

from .blueprints import TaskBuildArtifact
from .channel import ChannelPacket, PacketType, decode_packet, make_packet
from .errors import BuildMissing, ConfigError, DeployError, MalformedPacket, PortInUse

logger = logging.getLogger(__name__)

PacketCallback = Callable[[str, ChannelPacket], None]
DisconnectCallback = Callable[[str], None]


class HeartbeatVerdict(str, Enum):
    OK = "ok"
    TIMEOUT = "timeout"


def heartbeat_monitor(last_seen: float, now: float, heartbeat_timeout: float) -> HeartbeatVerdict:
    """TIMEOUT strictly after the allowance, OK at the boundary."""
    if now - last_seen > heartbeat_timeout:
        return HeartbeatVerdict.TIMEOUT
    return HeartbeatVerdict.OK


class Architect:
    """Three-phase server lifecycle. deploy() only after prepare();
    shutdown() is idempotent."""

    def prepare(self, artifact: TaskBuildArtifact) -> Path:
        raise NotImplementedError

    def deploy(self) -> str:
        raise NotImplementedError

    def shutdown(self) -> None:
        raise NotImplementedError


class LocalArchitect(Architect):
    """Hosts the task on the machine running the coordinator: static files
    from the prepared build dir plus the /channel websocket endpoint."""

    def __init__(
        self,
        port: int = 0,
        on_packet: PacketCallback | None = None,
        on_disconnect: DisconnectCallback | None = None,
    ) -> None:
        self.requested_port = port
        self.on_packet = on_packet or (lambda conn_id, packet: None)
        self.on_disconnect = on_disconnect or (lambda conn_id: None)
        self._build_dir: Path | None = None
        self._server: Server | None = None
        self._thread: threading.Thread | None = None
        self._connections: dict[str, ServerConnection] = {}
        self._conn_lock = threading.Lock()
        self.port: int | None = None

    # -- lifecycle -------------------------------------------------------------

    def prepare(self, artifact: TaskBuildArtifact) -> Path:
        build_dir = Path(artifact.build_dir)
        if not (build_dir / "index.html").exists():
            raise BuildMissing(f"{build_dir} has no index.html; build the task first")
        self._build_dir = build_dir
        return build_dir

    def deploy(self) -> str:
        if self._build_dir is None:
            raise BuildMissing("prepare() must run before deploy()")
        if self._server is not None:
            raise DeployError("already deployed")
        try:
            self._server = serve(
                self._handle_connection,
                "127.0.0.1",
                self.requested_port,
                process_request=self._process_request,
            )
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise PortInUse(f"port {self.requested_port} is already in use") from exc
            raise DeployError(str(exc)) from exc
        self.port = self._server.socket.getsockname()[1]
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="local-architect", daemon=True
        )
        self._thread.start()
        return f"http://localhost:{self.port}"

    def shutdown(self) -> None:
        server, self._server = self._server, None
        if server is None:
            return
        with self._conn_lock:
            connections = list(self._connections.values())
            self._connections.clear()
        for connection in connections:
            try:
                connection.close()
            except Exception:
                pass
        server.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    @property
    def channel_url(self) -> str:
        return f"ws://localhost:{self.port}/channel"

    # -- plain HTTP ------------------------------------------------------------

    def _process_request(self, connection: ServerConnection, request: Request) -> Response | None:
        path = request.path.split("?", 1)[0]
        if path == "/channel":
            return None  # proceed with the websocket handshake
        return self._serve_file(path)

    def _serve_file(self, path: str) -> Response:
        assert self._build_dir is not None
        relative = path.lstrip("/") or "index.html"
        target = (self._build_dir / relative).resolve()
        if not str(target).startswith(str(self._build_dir.resolve())) or not target.is_file():
            return Response(404, "Not Found", Headers([("Content-Type", "text/plain")]), b"not found")
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        body = target.read_bytes()
        return Response(
            200,
            "OK",
            Headers([("Content-Type", content_type), ("Content-Length", str(len(body)))]),
            body,
        )

    # -- channel ---------------------------------------------------------------

    def _handle_connection(self, connection: ServerConnection) -> None:
        conn_id = uuid.uuid4().hex
        with self._conn_lock:
            self._connections[conn_id] = connection
        try:
            for message in connection:
                try:
                    packet = decode_packet(message)
                except MalformedPacket as exc:
                    self.send(conn_id, make_packet(PacketType.ERROR_LOG, "", {"error": str(exc)}))
                    continue
                try:
                    self.on_packet(conn_id, packet)
                except Exception:
                    logger.exception("packet handler failed for %s", conn_id)
        finally:
            with self._conn_lock:
                self._connections.pop(conn_id, None)
            try:
                self.on_disconnect(conn_id)
            except Exception:
                logger.exception("disconnect handler failed for %s", conn_id)

    def send(self, conn_id: str, packet: ChannelPacket) -> bool:
        with self._conn_lock:
            connection = self._connections.get(conn_id)
        if connection is None:
            return False
        try:
            connection.send(packet.encode())
            return True
        except Exception:
            return False

    def close_connection(self, conn_id: str) -> None:
        with self._conn_lock:
            connection = self._connections.get(conn_id)
        if connection is not None:
            try:
                connection.close()
            except Exception:
                pass


ArchitectFactory = Callable[[dict[str, Any], PacketCallback, DisconnectCallback], Architect]

_REGISTRY: dict[str, ArchitectFactory] = {}


def register_architect(architect_type: str, factory: ArchitectFactory) -> None:
    if architect_type in _REGISTRY:
        raise ConfigError(f"architect {architect_type!r} already registered")
    _REGISTRY[architect_type] = factory


def get_architect_factory(architect_type: str) -> ArchitectFactory:
    if architect_type not in _REGISTRY:
        raise ConfigError(f"no architect registered for type {architect_type!r}")
    return _REGISTRY[architect_type]


def _local_factory(
    config: dict[str, Any], on_packet: PacketCallback, on_disconnect: DisconnectCallback
) -> LocalArchitect:
    from .config import dig

    return LocalArchitect(
        port=int(dig(config, "architect.port", 0) or 0),
        on_packet=on_packet,
        on_disconnect=on_disconnect,
    )


register_architect("local", _local_factory)
