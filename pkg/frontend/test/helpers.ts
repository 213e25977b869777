import { makePacket, Packet, PacketTypes, ViewFlagName, VIEW_FLAG_NAMES } from "../src/packets.js";
import { Transport } from "../src/transport.js";

export function viewFlags(active: ViewFlagName): Record<ViewFlagName, boolean> {
  return Object.fromEntries(VIEW_FLAG_NAMES.map((name) => [name, name === active])) as Record<
    ViewFlagName,
    boolean
  >;
}

export function detailsPacket(
  active: ViewFlagName,
  overrides: Record<string, unknown> = {},
): Packet {
  return makePacket(PacketTypes.AGENT_DETAILS, (overrides.agent_id as string) ?? "", {
    agent_id: null,
    init_data: null,
    unit_id: null,
    unit_kind: null,
    view_flags: viewFlags(active),
    reason: null,
    ...overrides,
  });
}

/** A hand-driven channel: the test opens it, pushes packets, drops it. */
export class StubTransport implements Transport {
  sent: Packet[] = [];
  closedByClient = false;
  private messageHandler: (text: string) => void = () => {};
  private openHandler: () => void = () => {};
  private closeHandler: () => void = () => {};

  send(text: string): void {
    this.sent.push(JSON.parse(text));
  }

  close(): void {
    this.closedByClient = true;
  }

  onMessage(handler: (text: string) => void): void {
    this.messageHandler = handler;
  }

  onOpen(handler: () => void): void {
    this.openHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  // test-side controls
  open(): void {
    this.openHandler();
  }

  push(packet: Packet): void {
    this.messageHandler(JSON.stringify(packet));
  }

  drop(): void {
    this.closeHandler();
  }

  sentOfType(type: string): Packet[] {
    return this.sent.filter((p) => p.packet_type === type);
  }
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs = 5000,
  label = "condition",
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) {
      return;
    }
    await new Promise((resolve) => setTimeout(resolve, 10));
  }
  if (!predicate()) {
    throw new Error(`timed out waiting for ${label}`);
  }
}
