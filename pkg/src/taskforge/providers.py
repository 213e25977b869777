"""Crowd providers bind Workers/Units/Agents to an external crowd.

Only MockProvider ships: it drives the same channel protocol real clients
use, so offline runs and tests exercise the full wire path, and it records
every provider-side action (register/expire/block/bonus/message/review) in
an inspectable append-only ledger.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
import time
import uuid
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Callable

from websockets.sync.client import connect as ws_connect

from .channel import (
    ACT_RETURN_UNIT,
    ChannelPacket,
    PacketType,
    decode_packet,
    make_packet,
)
from .entities import Agent, Unit, UnitStatus, Worker
from .errors import (
    ConfigError,
    DuplicateSession,
    IllegalTransition,
    InvalidAmount,
)
from .store import LocalStore
from .worker_ops import GLOBAL_BLOCK_QUALIFICATION


class CrowdProvider:
    """Provider duties: worker ops (block/bonus/message), unit ops
    (register/expire), agent ops (approve/reject/remote status)."""

    provider_type = "abstract"

    def register_unit(self, unit: Unit) -> str:
        raise NotImplementedError

    def expire_unit(self, unit: Unit) -> None:
        raise NotImplementedError

    def block_worker(self, worker: Worker, reason: str) -> None:
        raise NotImplementedError

    def unblock_worker(self, worker: Worker, reason: str) -> None:
        raise NotImplementedError

    def bonus_worker(self, worker: Worker, amount: Decimal, reason: str) -> None:
        raise NotImplementedError

    def message_worker(self, worker: Worker, text: str) -> None:
        raise NotImplementedError

    def approve_agent(self, agent: Agent) -> None:
        raise NotImplementedError

    def reject_agent(self, agent: Agent, soft: bool = False) -> None:
        raise NotImplementedError

    def get_remote_status(self, agent: Agent) -> str:
        raise NotImplementedError


class MockProvider(CrowdProvider):
    provider_type = "mock"

    def __init__(self, store: LocalStore) -> None:
        self.store = store
        self._ledger_path = store.data_root / "mock" / "ledger.jsonl"
        self._ledger_lock = threading.Lock()
        self._sessions: dict[str, "MockSession"] = {}
        self._session_lock = threading.Lock()

    # -- ledger -----------------------------------------------------------------

    def _record(self, kind: str, **fields: Any) -> None:
        entry = {"at": int(time.time() * 1000), "kind": kind, **fields}
        with self._ledger_lock:
            self._ledger_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self._ledger_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def read_ledger(self, run_id: str | None = None) -> list[dict[str, Any]]:
        if not self._ledger_path.exists():
            return []
        entries = [
            json.loads(line)
            for line in self._ledger_path.read_text(encoding="utf-8").splitlines()
            if line
        ]
        if run_id is not None:
            entries = [e for e in entries if e.get("run_id") == run_id]
        return entries

    def _run_id_of(self, unit: Unit) -> str:
        return self.store.get_assignment(unit.assignment_id).task_run_id

    # -- unit ops ----------------------------------------------------------------

    def register_unit(self, unit: Unit) -> str:
        if unit.status is not UnitStatus.CREATED:
            raise IllegalTransition(unit.status.value, "launch")
        external_id = f"mock-{unit.id}"
        self.store.set_unit_external_id(unit.id, external_id)
        self.store.update_unit_status(unit.id, UnitStatus.LAUNCHED)
        self._record(
            "register", unit_id=unit.id, external_id=external_id, run_id=self._run_id_of(unit)
        )
        return external_id

    def expire_unit(self, unit: Unit) -> None:
        current = self.store.get_unit(unit.id)
        if current.status is UnitStatus.EXPIRED:
            return
        if current.status not in (UnitStatus.LAUNCHED, UnitStatus.ASSIGNED):
            raise IllegalTransition(current.status.value, "expire")
        self.store.update_unit_status(unit.id, UnitStatus.EXPIRED)
        self._record("expire", unit_id=unit.id, run_id=self._run_id_of(unit))

    # -- worker ops ----------------------------------------------------------------

    def block_worker(self, worker: Worker, reason: str) -> None:
        self.store.grant_qualification(worker.id, GLOBAL_BLOCK_QUALIFICATION, 1)
        self._record("block", worker_name=worker.worker_name, reason=reason)

    def unblock_worker(self, worker: Worker, reason: str) -> None:
        self.store.revoke_qualification(worker.id, GLOBAL_BLOCK_QUALIFICATION)
        self._record("unblock", worker_name=worker.worker_name, reason=reason)

    def bonus_worker(self, worker: Worker, amount: Decimal, reason: str) -> None:
        amount = Decimal(str(amount))
        if amount <= 0:
            raise InvalidAmount(f"bonus must be > 0, got {amount}")
        self._record("bonus", worker_name=worker.worker_name, amount=str(amount), reason=reason)

    def message_worker(self, worker: Worker, text: str) -> None:
        self._record("message", worker_name=worker.worker_name, text=text)

    # -- agent ops ----------------------------------------------------------------

    def approve_agent(self, agent: Agent) -> None:
        self._record("approve", agent_id=agent.id)

    def reject_agent(self, agent: Agent, soft: bool = False) -> None:
        self._record("soft_reject" if soft else "reject", agent_id=agent.id)

    def get_remote_status(self, agent: Agent) -> str:
        return self.store.get_agent(agent.id).status.value

    def bonus_total(self) -> Decimal:
        return sum(
            (Decimal(e["amount"]) for e in self.read_ledger() if e["kind"] == "bonus"),
            Decimal("0"),
        )

    # -- mock sessions ---------------------------------------------------------------

    def mock_connect(self, worker_name: str, channel_url: str) -> "MockSession":
        """Open a session that speaks the real channel protocol as
        worker_name. One active session per worker name."""
        with self._session_lock:
            if worker_name in self._sessions:
                raise DuplicateSession(f"worker {worker_name!r} already has an active session")
            session = MockSession(self, worker_name, channel_url)
            self._sessions[worker_name] = session
        try:
            session._open()
        except Exception:
            with self._session_lock:
                self._sessions.pop(worker_name, None)
            raise
        return session

    def _release_session(self, worker_name: str) -> None:
        with self._session_lock:
            self._sessions.pop(worker_name, None)


@dataclass
class ScriptedWorker:
    """Offline crowd member: registers, answers, repeats."""

    name: str
    max_units: int = 0  # 0 = until no work is offered
    outputs: Any = None  # None = echo the init data
    onboarding_answer: Any = None
    screening_answer: Any = None

    @classmethod
    def from_config(cls, spec: dict[str, Any]) -> "ScriptedWorker":
        return cls(
            name=spec["name"],
            max_units=int(spec.get("units", 0)),
            outputs=spec.get("outputs"),
            onboarding_answer=spec.get("onboarding_answer"),
            screening_answer=spec.get("screening_answer"),
        )


class MockSession:
    """A synchronous scripted client on the live channel."""

    def __init__(self, provider: MockProvider, worker_name: str, channel_url: str) -> None:
        self.provider = provider
        self.worker_name = worker_name
        self.channel_url = channel_url
        self.connected_agent: str | None = None
        self._ws = None
        self._inbox: "queue.Queue[ChannelPacket]" = queue.Queue()
        self._reader: threading.Thread | None = None
        self._closed = False

    def _open(self) -> None:
        self._ws = ws_connect(self.channel_url)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            for message in self._ws:
                self._inbox.put(decode_packet(message))
        except Exception:
            pass

    def _send(self, packet: ChannelPacket) -> None:
        assert self._ws is not None, "session not connected"
        self._ws.send(packet.encode())

    def expect(self, *types: PacketType, timeout: float = 10.0) -> ChannelPacket:
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError(f"no {types} packet within {timeout}s")
            packet = self._inbox.get(timeout=remaining)
            if packet.packet_type in types:
                return packet

    # -- protocol actions -------------------------------------------------------

    def register(self, requested_unit_id: str | None = None, timeout: float = 10.0) -> ChannelPacket:
        self._send(
            make_packet(
                PacketType.REGISTER_AGENT,
                "",
                {
                    "worker_name": self.worker_name,
                    "provider_type": self.provider.provider_type,
                    "requested_unit_id": requested_unit_id,
                },
            )
        )
        details = self.expect(PacketType.AGENT_DETAILS, timeout=timeout)
        self.connected_agent = details.payload.get("agent_id")
        return details

    def submit(self, outputs: Any, timeout: float = 10.0) -> ChannelPacket:
        assert self.connected_agent, "no live agent to submit for"
        self._send(make_packet(PacketType.SUBMIT_UNIT, self.connected_agent, outputs))
        return self.expect(PacketType.UPDATE_STATUS, timeout=timeout)

    def submit_onboarding(self, answers: Any, timeout: float = 10.0) -> ChannelPacket:
        self._send(
            make_packet(
                PacketType.SUBMIT_ONBOARDING,
                self.connected_agent or "",
                {"worker_name": self.worker_name, "answers": answers},
            )
        )
        details = self.expect(PacketType.AGENT_DETAILS, timeout=timeout)
        self.connected_agent = details.payload.get("agent_id")
        return details

    def act(self, act_type: str, data: Any = None) -> None:
        assert self.connected_agent, "no live agent to act for"
        self._send(
            make_packet(
                PacketType.ACT, self.connected_agent, {"type": act_type, "data": data}
            )
        )

    def heartbeat(self) -> None:
        self._send(make_packet(PacketType.HEARTBEAT, self.connected_agent or "", {}))

    def rp_call(self, name: str, args: Any, timeout: float = 10.0) -> ChannelPacket:
        request_id = uuid.uuid4().hex
        self._send(
            make_packet(
                PacketType.RP_REQUEST,
                request_id,
                {"agent_id": self.connected_agent, "procedure": name, "args": args},
            )
        )
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError(f"no rp response for {name} within {timeout}s")
            packet = self._inbox.get(timeout=remaining)
            if packet.packet_type is PacketType.RP_RESPONSE and packet.subject_id == request_id:
                return packet

    def rp_send(self, name: str, args: Any) -> str:
        """Fire an RP_REQUEST without waiting; returns the request id."""
        request_id = uuid.uuid4().hex
        self._send(
            make_packet(
                PacketType.RP_REQUEST,
                request_id,
                {"agent_id": self.connected_agent, "procedure": name, "args": args},
            )
        )
        return request_id

    def return_unit(self) -> None:
        self.act(ACT_RETURN_UNIT)

    def send_raw(self, text: str) -> None:
        assert self._ws is not None
        self._ws.send(text)

    def disconnect(self) -> None:
        """Abrupt drop: kill the socket without a close handshake."""
        if self._ws is not None:
            try:
                # shutdown() is what actually interrupts the peer's recv
                self._ws.socket.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._ws.socket.close()
            except OSError:
                pass
        self._finish()

    def close(self) -> None:
        if self._ws is not None:
            try:
                self._ws.close()
            except Exception:
                pass
        self._finish()

    def _finish(self) -> None:
        if not self._closed:
            self._closed = True
            self.provider._release_session(self.worker_name)

    def __enter__(self) -> "MockSession":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


def run_scripted_worker(
    provider: MockProvider, spec: ScriptedWorker, channel_url: str, timeout: float = 30.0
) -> int:
    """Drive one scripted worker until refused or its unit cap is reached.
    Returns the number of units submitted."""
    submitted = 0
    session = provider.mock_connect(spec.name, channel_url)
    try:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if spec.max_units and submitted >= spec.max_units:
                break
            details = session.register()
            flags = details.payload.get("view_flags", {})
            if flags.get("show_onboarding"):
                details = session.submit_onboarding(spec.onboarding_answer)
                flags = details.payload.get("view_flags", {})
            if flags.get("blocked") or not details.payload.get("agent_id"):
                break
            if not flags.get("show_task"):
                break
            init_data = details.payload.get("init_data")
            kind = details.payload.get("unit_kind")
            if kind == "screening" and spec.screening_answer is not None:
                outputs = spec.screening_answer
            elif spec.outputs is not None:
                outputs = spec.outputs
            else:
                outputs = {"echo": init_data}
            session.submit(outputs)
            submitted += 1
    finally:
        session.close()
    return submitted


def run_scripted_crowd(
    provider: MockProvider, specs: list[ScriptedWorker], channel_url: str, timeout: float = 30.0
) -> dict[str, int]:
    """Run scripted workers concurrently; returns units submitted per worker."""
    results: dict[str, int] = {}
    lock = threading.Lock()

    def _drive(spec: ScriptedWorker) -> None:
        count = run_scripted_worker(provider, spec, channel_url, timeout)
        with lock:
            results[spec.name] = count

    threads = [threading.Thread(target=_drive, args=(s,), daemon=True) for s in specs]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join(timeout)
    return results


ProviderFactory = Callable[[LocalStore], CrowdProvider]

_REGISTRY: dict[str, ProviderFactory] = {}


def register_provider(provider_type: str, factory: ProviderFactory) -> None:
    if provider_type in _REGISTRY:
        raise ConfigError(f"provider {provider_type!r} already registered")
    _REGISTRY[provider_type] = factory


def get_provider_factory(provider_type: str) -> ProviderFactory:
    if provider_type not in _REGISTRY:
        raise ConfigError(f"no provider registered for type {provider_type!r}")
    return _REGISTRY[provider_type]


register_provider("mock", MockProvider)
