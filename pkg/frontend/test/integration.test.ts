// Cross-component tests against the real coordinator: the task client over а
// live websocket channel, and the reviewer against a real review server.

import { spawn, ChildProcessWithoutNullStreams } from "node:child_process";
import { createServer } from "node:net";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import readline from "node:readline";

import WebSocket from "ws";
import { afterEach, describe, expect, it } from "vitest";

import { TaskClient } from "../src/taskClient.js";
import { ReviewApiClient } from "../src/reviewApi.js";
import { ReviewerModel } from "../src/reviewerState.js";
import { webSocketTransport, WebSocketCtor } from "../src/transport.js";
import { waitFor } from "./helpers.js";

const LAUNCH_SCRIPT = `
import sys, json
from taskforge.store import LocalStore
from taskforge.operator import Operator
from taskforge.config import load_layered_config
store = LocalStore(sys.argv[1])
tree = load_layered_config(None, [
    "task.name=frontend-it",
    "task.title=Frontend integration",
    "architect.monitor_interval=60",
])
operator = Operator(store)
handle = operator.launch_run(tree, input_items=[{"question": "2+2?"}])
print(json.dumps({"url": handle.url}), flush=True)
sys.stdin.readline()
summary = operator.shutdown_run(handle)
exported = store.export_run(handle.task_run_id)
summary["exported_outputs"] = [record.outputs for record in exported]
print(json.dumps(summary), flush=True)
`;

function firstLine(child: ChildProcessWithoutNullStreams): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = readline.createInterface({ input: child.stdout });
    reader.once("line", (line) => resolve(line));
    child.once("exit", (code) => reject(new Error(`backend exited early (${code})`)));
  });
}

function freePort(): Promise<number> {
  return new Promise((resolve) => {
    const probe = createServer();
    probe.listen(0, () => {
      const port = (probe.address() as { port: number }).port;
      probe.close(() => resolve(port));
    });
  });
}

const children: ChildProcessWithoutNullStreams[] = [];

afterEach(() => {
  for (const child of children.splice(0)) {
    child.kill("SIGKILL");
  }
});

describe("against the real backend", () => {
  it(
    "task client registers, submits, and the run completes",
    { timeout: 60_000 },
    async () => {
      const dataRoot = mkdtempSync(join(tmpdir(), "tf-it-"));
      const child = spawn("python3", ["-c", LAUNCH_SCRIPT, join(dataRoot, "data")], {
        stdio: ["pipe", "pipe", "pipe"],
      });
      children.push(child);
      child.stderr.on("data", () => {});
      const { url } = JSON.parse(await firstLine(child)) as { url: string };
      const channelUrl = url.replace("http://", "ws://") + "/channel";

      const client = new TaskClient({
        workerName: "browser-worker",
        connect: webSocketTransport(channelUrl, WebSocket as unknown as WebSocketCtor),
        heartbeatIntervalMs: 1000,
      });
      client.start();
      await waitFor(() => client.state.view === "task", 10_000, "task view");
      expect(client.state.initData).toEqual({ question: "2+2?" });
      client.submitTask({ answer: "4" });
      await waitFor(() => client.state.view === "submitted", 10_000, "submitted view");
      client.stop();

      const summaryLine = new Promise<string>((resolve) => {
        const reader = readline.createInterface({ input: child.stdout });
        reader.once("line", resolve);
      });
      child.stdin.write("done\n");
      const summary = JSON.parse(await summaryLine) as {
        counters: { units_completed: number };
        exported_outputs: unknown[];
      };
      expect(summary.counters.units_completed).toBe(1);
      // what the reviewer will see equals what the client sent
      expect(summary.exported_outputs).toEqual([{ answer: "4" }]);
    },
  );

  it(
    "reviewer drains a real review server and the decision stream matches the schema",
    { timeout: 60_000 },
    async () => {
      const port = await freePort();
      const lines = [0, 1, 2].map((i) => JSON.stringify({ text: `item ${i}` }));
      const child = spawn(
        "python3",
        ["-m", "taskforge.cli", "review", "--json", "json-pretty", "--stdout",
         "--port", String(port)],
        { stdio: ["pipe", "pipe", "pipe"], env: { ...process.env, TASKFORGE_DATA_ROOT: mkdtempSync(join(tmpdir(), "tf-rev-")) } },
      );
      children.push(child);
      child.stderr.on("data", () => {});
      child.stdin.write(lines.join("\n") + "\n");
      child.stdin.end();

      const api = new ReviewApiClient(`http://127.0.0.1:${port}`);
      await waitFor(() => true, 10, "warmup");
      let up = false;
      for (let attempt = 0; attempt < 100 && !up; attempt += 1) {
        try {
          await api.count();
          up = true;
        } catch {
          await new Promise((resolve) => setTimeout(resolve, 100));
        }
      }
      expect(up).toBe(true);

      const stdout: string[] = [];
      readline.createInterface({ input: child.stdout }).on("line", (line) => stdout.push(line));

      const model = new ReviewerModel(api);
      await model.decideAll({ verdict: "approve", qualifications_to_grant: [["seen", 1]] });
      expect(model.state.finished).toBe(true);

      const exitCode = await new Promise<number | null>((resolve) => child.once("exit", resolve));
      expect(exitCode).toBe(0); // the server drained once all items were decided

      expect(stdout).toHaveLength(3);
      stdout.forEach((line, index) => {
        const record = JSON.parse(line) as {
          index: number;
          data: unknown;
          decision: Record<string, unknown>;
        };
        expect(record.index).toBe(index);
        expect(record.data).toEqual({ text: `item ${index}` });
        expect(record.decision.verdict).toBe("approve");
        expect(record.decision).toHaveProperty("bonus");
        expect(record.decision).toHaveProperty("feedback_to_worker");
        expect(record.decision).toHaveProperty("qualifications_to_grant");
        expect(record.decision).toHaveProperty("reviewed_at");
        // the data field is byte-identical to the piped input line
        expect(line).toContain(`"data": ${lines[index]},`);
      });
    },
  );
});
