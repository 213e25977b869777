import { describe, expect, it } from "vitest";

import { activeView, decodePacket, encodePacket, makePacket, PacketTypes } from "../src/packets.js";
import { viewFlags } from "./helpers.js";

describe("packet wire format", () => {
  it("round-trips through encode/decode with exact fields", () => {
    const packet = makePacket(PacketTypes.SUBMIT_UNIT, "agent-1", { label: 3 });
    const decoded = decodePacket(encodePacket(packet));
    expect(decoded).toEqual(packet);
    const raw = JSON.parse(encodePacket(packet));
    expect(Object.keys(raw).sort()).toEqual(
      ["packet_id", "packet_type", "payload", "sent_at", "subject_id"],
    );
  });

  it("rejects malformed packets", () => {
    expect(() => decodePacket("not json")).toThrow(/malformed/);
    expect(() => decodePacket('{"packet_id": "x"}')).toThrow(/missing/);
    expect(() =>
      decodePacket(
        JSON.stringify({
          packet_id: "x",
          packet_type: "warp_drive",
          subject_id: "",
          payload: null,
          sent_at: 0,
        }),
      ),
    ).toThrow(/unknown type/);
  });

  it("mints unique packet ids", () => {
    const ids = new Set(
      Array.from({ length: 50 }, () => makePacket(PacketTypes.HEARTBEAT, "", {}).packet_id),
    );
    expect(ids.size).toBe(50);
  });
});

describe("view flags", () => {
  it("resolves the single active flag", () => {
    expect(activeView(viewFlags("show_task"))).toBe("show_task");
    expect(activeView(viewFlags("blocked"))).toBe("blocked");
  });

  it("rejects zero or multiple active flags", () => {
    const none = viewFlags("show_task");
    none.show_task = false;
    expect(() => activeView(none)).toThrow(/exactly one/);
    const two = viewFlags("show_task");
    two.blocked = true;
    expect(() => activeView(two)).toThrow(/exactly one/);
  });
});
