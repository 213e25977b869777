// Wire schema for the task channel. Field names and packet types must match
// the coordinator exactly: packet_id, packet_type, subject_id, payload, sent_at.

export const PacketTypes = {
  ALIVE: "alive",
  REGISTER_AGENT: "register_agent",
  AGENT_DETAILS: "agent_details",
  ACT: "act",
  SUBMIT_UNIT: "submit_unit",
  SUBMIT_ONBOARDING: "submit_onboarding",
  HEARTBEAT: "heartbeat",
  UPDATE_STATUS: "update_status",
  RP_REQUEST: "rp_request",
  RP_RESPONSE: "rp_response",
  ERROR_LOG: "error_log",
} as const;

export type PacketType = (typeof PacketTypes)[keyof typeof PacketTypes];

export interface Packet {
  packet_id: string;
  packet_type: PacketType;
  subject_id: string;
  payload: any;
  sent_at: number;
}

export const VIEW_FLAG_NAMES = [
  "show_preview",
  "show_onboarding",
  "show_task",
  "show_submitted",
  "blocked",
] as const;

export type ViewFlagName = (typeof VIEW_FLAG_NAMES)[number];
export type ViewFlags = Record<ViewFlagName, boolean>;

export interface Tip {
  header: string;
  body: string;
}

export interface AgentDetailsPayload {
  agent_id: string | null;
  init_data: unknown;
  unit_id: string | null;
  unit_kind: string | null;
  view_flags: ViewFlags;
  reason: string | null;
  tips?: Tip[];
}

// Reserved ACT payload types understood by the coordinator.
export const ActTypes = {
  PARTIAL_SAVE: "partial_save",
  RETURN_UNIT: "return_unit",
  FEEDBACK: "feedback",
  TIP: "tip",
} as const;

const KNOWN_TYPES = new Set<string>(Object.values(PacketTypes));

function uuid(): string {
  if (typeof crypto !== "undefined" && crypto.randomUUID) {
    return crypto.randomUUID().replace(/-/g, "");
  }
  return Math.random().toString(16).slice(2) + Date.now().toString(16);
}

export function makePacket(type: PacketType, subjectId: string, payload: unknown): Packet {
  return {
    packet_id: uuid(),
    packet_type: type,
    subject_id: subjectId,
    payload,
    sent_at: Date.now(),
  };
}

export function encodePacket(packet: Packet): string {
  return JSON.stringify({
    packet_id: packet.packet_id,
    packet_type: packet.packet_type,
    subject_id: packet.subject_id,
    payload: packet.payload,
    sent_at: packet.sent_at,
  });
}

export function decodePacket(text: string): Packet {
  let data: any;
  try {
    data = JSON.parse(text);
  } catch (err) {
    throw new Error(`malformed packet: ${(err as Error).message}`);
  }
  if (typeof data !== "object" || data === null) {
    throw new Error("malformed packet: not an object");
  }
  for (const field of ["packet_id", "packet_type", "subject_id", "payload", "sent_at"]) {
    if (!(field in data)) {
      throw new Error(`malformed packet: missing ${field}`);
    }
  }
  if (!KNOWN_TYPES.has(data.packet_type)) {
    throw new Error(`malformed packet: unknown type ${data.packet_type}`);
  }
  return data as Packet;
}

/** The single active flag; the server guarantees exactly one is set. */
export function activeView(flags: ViewFlags): ViewFlagName {
  const active = VIEW_FLAG_NAMES.filter((name) => flags[name]);
  if (active.length !== 1) {
    throw new Error(`expected exactly one view flag, got ${active.length}`);
  }
  return active[0];
}
