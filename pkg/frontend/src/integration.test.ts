// Round trip against a live gateway: the real server process, the real
// socket, the real client. Covers the operator workflow end to end:
// ordered step cards, a mid-run interjection, a tool toggle, and a
// refresh-style rebuild via backfill.

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { GatewayClient, SocketLike } from "./client.js";
import { CoverageArtifact, CoverageModel, shadeAlpha } from "./heatmap.js";
import { SessionView } from "./state.js";

const PACED_MODEL = "scripted@40ms:builtin:delivery_leo";

let gateway: ChildProcess;
let wsUrl = "";

function nodeSocketFactory(url: string): SocketLike {
  return new WebSocket(url) as unknown as SocketLike;
}

async function poll<T>(
  probe: () => T | undefined,
  timeoutMs = 10000,
  what = "condition",
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const value = probe();
    if (value !== undefined) return value;
    await new Promise((resolve) => setTimeout(resolve, 15));
  }
  throw new Error(`timed out waiting for ${what}`);
}

function connectedClient(): Promise<GatewayClient> {
  const client = new GatewayClient(wsUrl, { socketFactory: nodeSocketFactory });
  client.connect();
  return poll(() => (client.state.connected ? client : undefined), 5000, "connect").then(
    () => client,
  );
}

beforeAll(async () => {
  gateway = spawn("agentloop", ["serve", "--port", "0", "--snapshot-hz", "50"], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  const line: string = await new Promise((resolve, reject) => {
    let buffer = "";
    gateway.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/listening on (ws:\S+)/);
      if (match) resolve(match[1]);
    });
    gateway.on("exit", (code) => reject(new Error(`gateway exited early (${code})`)));
    setTimeout(() => reject(new Error("gateway did not start")), 15000);
  });
  wsUrl = line;
}, 20000);

afterAll(() => {
  gateway?.kill();
});

describe("console against a live gateway", () => {
  it("streams every step card in order, applies an interjection within 1 s, "
    + "reflects a tool toggle after ack, and rebuilds identically on refresh",
  async () => {
    const live = await connectedClient();

    const started = await live.command("start_task", {
      task_id: "delivery",
      agent_kind: "leo",
      model: PACED_MODEL,
    });
    expect(started.kind).toBe("ack");
    const sid = String(started.payload.session_id);
    live.state.selected = sid;

    // The session is paced at ~40 ms per step; interject while it runs.
    await poll(
      () => {
        const view = live.state.sessions[sid];
        return view && view.stepCount >= 2 ? view : undefined;
      },
      5000,
      "second step",
    );
    const interjectSent = Date.now();
    const reply = await live.command("interject", { session_id: sid, text: "mind the lamp" });
    expect(reply.kind).toBe("ack");
    await poll(
      () => {
        const view = live.state.sessions[sid];
        return view.cards.some((c) => c.kind === "interjection" && c.text === "mind the lamp")
          ? true
          : undefined;
      },
      1000,
      "interjection card within 1 s",
    );
    expect(Date.now() - interjectSent).toBeLessThan(1000);

    // Tool toggle: pending until ack, reflected in the catalog afterwards.
    const toggled = await live.command("set_tool_enabled", { name: "detect", flag: false });
    expect(toggled.kind).toBe("ack");
    const tools = await live.command("list_tools");
    const detect = (tools.payload.tools as { name: string; enabled: boolean }[]).find(
      (t) => t.name === "detect",
    );
    expect(detect?.enabled).toBe(false);
    await live.command("set_tool_enabled", { name: "detect", flag: true });

    // Run to completion; every step card present, in order, ending once.
    const view: SessionView = await poll(
      () => {
        const v = live.state.sessions[sid];
        return v?.ended ? v : undefined;
      },
      15000,
      "session end",
    );
    const stepActions = view.cards
      .filter((c) => c.kind === "step")
      .map((c) => (c as { action: string }).action);
    expect(stepActions).toHaveLength(14);
    expect(stepActions[stepActions.length - 1]).toBe("final_response");
    expect(view.cards.filter((c) => c.kind === "ended")).toHaveLength(1);
    expect(view.tokenTotal).toBe(view.finalTokenUsage?.total);
    expect(view.tokenMismatch).toBe(false);

    // "Refresh": a brand new client rebuilds the same timeline via backfill.
    const fresh = await connectedClient();
    const rebuilt: SessionView = await poll(
      () => {
        const v = fresh.state.sessions[sid];
        return v && v.ended ? v : undefined;
      },
      5000,
      "backfilled session",
    );
    expect(rebuilt.cards).toEqual(view.cards);
    expect(rebuilt.snapshot?.held_entity).toBe(view.snapshot?.held_entity);

    live.close();
    fresh.close();
  }, 30000);

  it("renders the exported room-search coverage artifact with monotone shading", () => {
    // Drive the harness exporter end to end, then load its artifact the same
    // way the coverage tab does and spot-check the shading order.
    const dir = mkdtempSync(join(tmpdir(), "coverage-"));
    execFileSync("agentloop", [
      "run", "--task", "room_search", "--agent", "leo", "--reps", "1",
      "--model", "scripted:builtin:room_leo", "--out", dir,
    ]);
    const record = JSON.parse(
      readFileSync(join(dir, "records.jsonl"), "utf-8").split("\n")[0],
    ) as { trace_file: string; score: number };
    expect(record.score).toBe(20);
    execFileSync("agentloop", [
      "coverage", "--trace", join(dir, record.trace_file),
      "--scenario", "../src/agentloop/scenarios/room.json", "--out", dir,
    ]);
    const doc = JSON.parse(readFileSync(join(dir, "coverage.json"), "utf-8")) as CoverageArtifact;
    const model = CoverageModel.fromArtifact(doc);
    expect(model.total()).toBeGreaterThan(0);
    expect(doc.path.length).toBeGreaterThan(1);

    const max = model.maxCount();
    const cells: { count: number; alpha: number }[] = [];
    for (let ix = 0; ix < model.nx && cells.length < 12; ix += 2) {
      for (let iy = 0; iy < model.ny && cells.length < 12; iy += 2) {
        const count = model.counts[ix][iy];
        cells.push({ count, alpha: shadeAlpha(count, max) });
      }
    }
    expect(cells.length).toBeGreaterThanOrEqual(10);
    const ordered = [...cells].sort((a, b) => a.count - b.count);
    for (let i = 1; i < ordered.length; i++) {
      if (ordered[i].count === ordered[i - 1].count) {
        expect(ordered[i].alpha).toBe(ordered[i - 1].alpha);
      } else {
        expect(ordered[i].alpha).toBeGreaterThan(ordered[i - 1].alpha);
      }
    }
  }, 30000);

  it("interjecting into a finished session surfaces the gateway error", async () => {
    const client = await connectedClient();
    const started = await client.command("start_task", {
      task_id: "delivery",
      agent_kind: "leo",
      model: "scripted:builtin:delivery_leo", // unpaced: finishes immediately
    });
    const sid = String(started.payload.session_id);
    await poll(
      () => (client.state.sessions[sid]?.ended ? true : undefined),
      10000,
      "fast session end",
    );
    const reply = await client.command("interject", { session_id: sid, text: "too late" });
    expect(reply.kind).toBe("error");
    expect(String(reply.payload.error)).toMatch(/finish/);
    client.close();
  }, 20000);
});
