// The secondary component's acceptance criteria, one PASS line each.

import { describe, expect, it } from "vitest";

import { makePacket, PacketTypes } from "../src/packets.js";
import { ReviewApiClient } from "../src/reviewApi.js";
import { ReviewerModel } from "../src/reviewerState.js";
import { TaskClient } from "../src/taskClient.js";
import { detailsPacket, StubTransport, viewFlags } from "./helpers.js";

describe("secondary acceptance", () => {
  it("[ACCEPTANCE 10] task client contract: views, submit payload, tip gating", () => {
    const flagViews = [
      ["show_preview", "preview"],
      ["show_onboarding", "onboarding"],
      ["show_task", "task"],
      ["show_submitted", "submitted"],
      ["blocked", "blocked"],
    ] as const;
    for (const [flag, view] of flagViews) {
      const transport = new StubTransport();
      const client = new TaskClient({ workerName: "w", connect: () => transport });
      client.start();
      transport.open();
      transport.push(detailsPacket(flag));
      expect(client.state.view).toBe(view);
    }

    const transport = new StubTransport();
    const client = new TaskClient({ workerName: "w", connect: () => transport });
    client.start();
    transport.open();
    transport.push(detailsPacket("show_task", { agent_id: "a1", tips: [] }));
    const formContent = { rating: 5, comment: "sharp" };
    client.submitTask(formContent);
    const submit = transport.sentOfType(PacketTypes.SUBMIT_UNIT)[0];
    expect(submit.payload).toEqual(formContent);

    // tips hidden until served post-moderation
    client.sendTip("Zoom", "ctrl+wheel");
    transport.push(makePacket(PacketTypes.UPDATE_STATUS, "a1", { act_ack: "tip", tip_id: "1" }));
    expect(client.state.tips).toEqual([]);
    transport.push(
      detailsPacket("show_task", { agent_id: "a2", tips: [{ header: "Zoom", body: "ctrl+wheel" }] }),
    );
    expect(client.state.tips).toEqual([{ header: "Zoom", body: "ctrl+wheel" }]);
  });

  it("[ACCEPTANCE 11] reviewer contract: drain + decision schema", async () => {
    const items = Array.from({ length: 4 }, (_, i) => ({ text: `item ${i}` }));
    const decisions = new Map<number, Record<string, unknown>>();
    const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
      const path = url.replace(/^https?:\/\/[^/]+/, "");
      const json = (status: number, body: unknown) =>
        new Response(JSON.stringify(body), { status });
      if (path === "/api/items/count") {
        return json(200, { count: items.length, decided: decisions.size });
      }
      const item = path.match(/^\/api\/items\/(\d+)$/);
      if (item) {
        const index = Number(item[1]);
        return json(200, {
          index,
          data: items[index],
          rendered: { template: "json-pretty", pretty: "{}" },
          ...(decisions.has(index) ? { decision: decisions.get(index) } : {}),
        });
      }
      const decide = path.match(/^\/api\/items\/(\d+)\/decision$/);
      if (decide && init?.method === "POST") {
        const index = Number(decide[1]);
        if (decisions.has(index)) {
          return json(409, { error: "already decided" });
        }
        decisions.set(index, JSON.parse(String(init.body)));
        return json(200, { ok: true, decided: decisions.size });
      }
      return json(404, { error: "unknown" });
    };

    const model = new ReviewerModel(new ReviewApiClient("http://stub", fetchFn));
    await model.decideAll({ verdict: "approve" });
    expect(model.state.finished).toBe(true);
    expect(decisions.size).toBe(items.length);
    for (const body of decisions.values()) {
      // criterion 8's decision schema: verdict plus optional extras
      expect(["approve", "reject", "soft_reject"]).toContain(body.verdict);
    }
  });
});
