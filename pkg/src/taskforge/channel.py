"""Wire format for the bidirectional task channel.

Packets are JSON text messages with exactly the fields packet_id,
packet_type, subject_id, payload, sent_at — the schema every deployed
client, mock session, and the coordinator agree on.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .errors import MalformedPacket


class PacketType(str, Enum):
    ALIVE = "alive"
    REGISTER_AGENT = "register_agent"
    AGENT_DETAILS = "agent_details"
    ACT = "act"
    SUBMIT_UNIT = "submit_unit"
    SUBMIT_ONBOARDING = "submit_onboarding"
    HEARTBEAT = "heartbeat"
    UPDATE_STATUS = "update_status"
    RP_REQUEST = "rp_request"
    RP_RESPONSE = "rp_response"
    ERROR_LOG = "error_log"


# Reserved ACT payload types; everything else is blueprint-defined.
ACT_PARTIAL_SAVE = "partial_save"
ACT_RETURN_UNIT = "return_unit"
ACT_FEEDBACK = "feedback"
ACT_TIP = "tip"

VIEW_FLAGS = ("show_preview", "show_onboarding", "show_task", "show_submitted", "blocked")

WIRE_FIELDS = ("packet_id", "packet_type", "subject_id", "payload", "sent_at")


@dataclass(frozen=True)
class ChannelPacket:
    packet_id: str
    packet_type: PacketType
    subject_id: str
    payload: Any
    sent_at: int

    def encode(self) -> str:
        return json.dumps(
            {
                "packet_id": self.packet_id,
                "packet_type": self.packet_type.value,
                "subject_id": self.subject_id,
                "payload": self.payload,
                "sent_at": self.sent_at,
            },
            ensure_ascii=False,
        )


def make_packet(packet_type: PacketType, subject_id: str, payload: Any) -> ChannelPacket:
    return ChannelPacket(
        packet_id=uuid.uuid4().hex,
        packet_type=packet_type,
        subject_id=subject_id,
        payload=payload,
        sent_at=int(time.time() * 1000),
    )


def decode_packet(text: str | bytes) -> ChannelPacket:
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedPacket(f"packet is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedPacket("packet must be a JSON object")
    missing = [f for f in WIRE_FIELDS if f not in data]
    if missing:
        raise MalformedPacket(f"packet missing fields: {missing}")
    try:
        packet_type = PacketType(data["packet_type"])
    except ValueError as exc:
        raise MalformedPacket(f"unknown packet_type {data['packet_type']!r}") from exc
    if not isinstance(data["packet_id"], str) or not isinstance(data["subject_id"], str):
        raise MalformedPacket("packet_id and subject_id must be strings")
    return ChannelPacket(
        packet_id=data["packet_id"],
        packet_type=packet_type,
        subject_id=data["subject_id"],
        payload=data["payload"],
        sent_at=int(data["sent_at"]),
    )


def view_flags(active: str) -> dict[str, bool]:
    """The mutually exclusive view flag set with exactly `active` turned on."""
    if active not in VIEW_FLAGS:
        raise ValueError(f"unknown view flag {active!r}")
    return {flag: flag == active for flag in VIEW_FLAGS}
