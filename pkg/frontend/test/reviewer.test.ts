// Reviewer contract tests against a stubbed review API plus renderer checks.

import { describe, expect, it } from "vitest";

import { renderDescriptor } from "../src/renderers.js";
import { FetchLike, ReviewApiClient } from "../src/reviewApi.js";
import { ReviewerModel } from "../src/reviewerState.js";

function stubReviewServer(items: unknown[]) {
  const decisions = new Map<number, Record<string, unknown>>();
  const requests: Array<{ url: string; body?: unknown }> = [];

  const respond = (status: number, body: unknown): Response =>
    new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });

  const fetchFn: FetchLike = async (url, init) => {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    requests.push({ url: path, body: init?.body ? JSON.parse(String(init.body)) : undefined });
    if (path === "/api/items/count") {
      return respond(200, { count: items.length, decided: decisions.size });
    }
    const itemMatch = path.match(/^\/api\/items\/(\d+)$/);
    if (itemMatch) {
      const index = Number(itemMatch[1]);
      if (index >= items.length) {
        return respond(404, { error: "no such item" });
      }
      const payload: Record<string, unknown> = {
        index,
        data: items[index],
        rendered: { template: "json-pretty", pretty: JSON.stringify(items[index], null, 2) },
      };
      if (decisions.has(index)) {
        payload.decision = decisions.get(index);
      }
      return respond(200, payload);
    }
    const decideMatch = path.match(/^\/api\/items\/(\d+)\/decision$/);
    if (decideMatch && init?.method === "POST") {
      const index = Number(decideMatch[1]);
      if (decisions.has(index)) {
        return respond(409, { error: `item ${index} already decided` });
      }
      decisions.set(index, JSON.parse(String(init.body)));
      return respond(200, { ok: true, decided: decisions.size });
    }
    return respond(404, { error: "unknown endpoint" });
  };
  return { fetchFn, decisions, requests };
}

const ITEMS = [{ text: "one" }, { text: "two" }, { text: "three" }];

describe("reviewer flow", () => {
  it("deciding every item drains the session and posts schema-valid decisions", async () => {
    const server = stubReviewServer(ITEMS);
    const model = new ReviewerModel(new ReviewApiClient("http://stub", server.fetchFn));
    await model.load();
    expect(model.state.count).toBe(3);
    expect(model.state.current?.index).toBe(0);
    while (!model.state.finished) {
      await model.decide({ verdict: "approve" });
    }
    expect(model.state.decided).toBe(3);
    expect(server.decisions.size).toBe(3);
    for (const body of server.decisions.values()) {
      expect(body.verdict).toBe("approve");
    }
  });

  it("progress reflects decided/count", async () => {
    const states: string[] = [];
    const server = stubReviewServer(ITEMS);
    const model = new ReviewerModel(
      new ReviewApiClient("http://stub", server.fetchFn),
      (state) => states.push(`${state.decided}/${state.count}`),
    );
    await model.load();
    await model.decide({ verdict: "approve" });
    await model.decide({ verdict: "reject" });
    await model.decide({ verdict: "soft_reject" });
    expect(states[states.length - 1]).toBe("3/3");
    expect(model.state.finished).toBe(true);
  });

  it("surfaces a conflict banner on double decisions", async () => {
    const server = stubReviewServer(ITEMS);
    const api = new ReviewApiClient("http://stub", server.fetchFn);
    const model = new ReviewerModel(api);
    await model.load();
    await api.decide(0, { verdict: "approve" }); // decided out-of-band
    await model.goTo(0);
    const result = await model.decide({ verdict: "reject" });
    expect(result.ok).toBe(false);
    expect(model.state.conflict).toMatch(/already decided/);
    // the recorded decision stands
    const item = await api.item(0);
    expect((item.decision as { verdict: string }).verdict).toBe("approve");
  });

  it("decideAll recovers past conflicts and drains", async () => {
    const server = stubReviewServer(ITEMS);
    const api = new ReviewApiClient("http://stub", server.fetchFn);
    await api.decide(1, { verdict: "reject" });
    const model = new ReviewerModel(api);
    await model.decideAll({ verdict: "approve" });
    expect(model.state.finished).toBe(true);
    expect(server.decisions.size).toBe(3);
  });

  it("carries bonus, feedback and qualifications in the decision body", async () => {
    const server = stubReviewServer([{ text: "solo" }]);
    const model = new ReviewerModel(new ReviewApiClient("http://stub", server.fetchFn));
    await model.load();
    await model.decide({
      verdict: "approve",
      bonus: "0.25",
      feedback_to_worker: "nice",
      qualifications_to_grant: [["trusted", 1]],
    });
    const body = server.decisions.get(0)!;
    expect(body).toEqual({
      verdict: "approve",
      bonus: "0.25",
      feedback_to_worker: "nice",
      qualifications_to_grant: [["trusted", 1]],
    });
  });
});

describe("renderers", () => {
  it("renders json-pretty descriptors into escaped pre blocks", () => {
    const html = renderDescriptor({ template: "json-pretty", pretty: '{\n  "a": "<b>"\n}' });
    expect(html).toContain("json-pretty");
    expect(html).toContain("&lt;b&gt;");
    expect(html).not.toContain("<b>");
  });

  it("renders word-cloud tokens in descending order", () => {
    const html = renderDescriptor({
      template: "word-cloud",
      tokens: [
        ["the", 2],
        ["cat", 1],
        ["dog", 1],
      ],
    });
    const order = ["the", "cat", "dog"].map((token) => html.indexOf(`>${token}<`));
    expect(order[0]).toBeGreaterThan(-1);
    expect(order[0]).toBeLessThan(order[1]);
    expect(order[1]).toBeLessThan(order[2]);
  });
});
