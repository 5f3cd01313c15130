import { describe, expect, it } from "vitest";

import { GatewayClient, SocketLike } from "./client.js";

/** In-memory gateway double speaking the frame protocol. */
class FakeSocket implements SocketLike {
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  sent: Record<string, unknown>[] = [];
  closed = false;

  constructor(private responder: (frame: Record<string, unknown>) => void) {}

  send(data: string): void {
    const frame = JSON.parse(data);
    this.sent.push(frame);
    this.responder(frame);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  open(): void {
    this.onopen?.();
  }

  push(frame: Record<string, unknown>): void {
    this.onmessage?.({ data: JSON.stringify(frame) });
  }
}

interface GatewayDouble {
  socket: FakeSocket;
  client: GatewayClient;
  pushEvent(type: string, sessionId: string | null, payload: Record<string, unknown>): void;
}

function descriptor(sid: string, status = "running") {
  return { session_id: sid, task_id: "delivery", agent_kind: "leo", status, created_at: 1 };
}

function makeGateway(options: {
  sessions?: Record<string, unknown>[];
  traces?: Record<string, unknown[]>;
} = {}): GatewayDouble {
  let eventSeq = 0;
  const sessions = options.sessions ?? [];
  const traces = options.traces ?? {};
  const sockets: FakeSocket[] = [];

  const responder = (frame: Record<string, unknown>): void => {
    const socket = sockets[sockets.length - 1];
    const seq = frame.seq as number;
    const type = frame.type as string;
    const payload = (frame.payload ?? {}) as Record<string, unknown>;
    const ack = (body: Record<string, unknown>) =>
      socket.push({ kind: "ack", type, seq, payload: body });
    if (type === "list_tools") ack({ tools: [{ name: "detect", description: "d", enabled: true }] });
    else if (type === "list_sessions") ack({ sessions });
    else if (type === "get_trace") {
      ack({ entries: traces[payload.session_id as string] ?? [] });
    } else if (type === "get_snapshot") {
      ack({
        snapshot: {
          bounds: { min: [0, 0, 0], max: [10, 10, 3] },
          robot: { kind: "uav", pose: [1, 1, 1, 0], speed: 1, yaw_rate: 90, reach: 0.8 },
          fov: { half_angle_deg: 45, range_m: 5 },
          entities: [], origin: [0, 0, 1], held_entity: null, sim_clock: 0,
        },
      });
    } else if (type === "boom") {
      socket.push({ kind: "error", type, seq, payload: { error: "kaboom" } });
    } else ack({});
  };

  const client = new GatewayClient("ws://test/ws", {
    socketFactory: () => {
      const socket = new FakeSocket(responder);
      sockets.push(socket);
      return socket;
    },
    reconnectDelayMs: 1,
  });
  client.connect();
  const socket = sockets[sockets.length - 1];
  return {
    socket,
    client,
    pushEvent: (type, sessionId, payload) => {
      eventSeq += 1;
      socket.push({ kind: "event", type, session_id: sessionId, seq: eventSeq, payload });
    },
  };
}

const flush = () => new Promise((resolve) => setTimeout(resolve, 0));

describe("command correlation", () => {
  it("resolves each command with the reply matching its seq", async () => {
    const gw = makeGateway();
    gw.socket.open();
    await flush();
    const reply = await gw.client.command("list_tools");
    expect(reply.kind).toBe("ack");
    expect(reply.payload.tools).toBeTruthy();
    const sent = gw.socket.sent.filter((f) => f.type === "list_tools");
    expect(new Set(sent.map((f) => f.seq)).size).toBe(sent.length); // unique seqs
  });

  it("surfaces error frames to the caller", async () => {
    const gw = makeGateway();
    gw.socket.open();
    await flush();
    const reply = await gw.client.command("boom");
    expect(reply.kind).toBe("error");
    expect(reply.payload.error).toBe("kaboom");
  });

  it("assigns strictly increasing command seqs", async () => {
    const gw = makeGateway();
    gw.socket.open();
    await flush();
    await gw.client.command("list_tools");
    await gw.client.command("list_sessions");
    const seqs = gw.socket.sent.map((f) => f.seq as number);
    expect(seqs).toEqual([...seqs].sort((a, b) => a - b));
    expect(new Set(seqs).size).toBe(seqs.length);
  });

  it("rejects commands while disconnected", async () => {
    const gw = makeGateway();
    await expect(gw.client.command("list_tools")).rejects.toThrow("not connected");
  });
});

describe("connect and resync", () => {
  it("rebuilds sessions, traces, and snapshots on connect", async () => {
    const trace = [
      { kind: "user_task", payload: "deliver", timestamp: 0, sim_time: 0 },
      {
        kind: "agent_step",
        payload: { message: "go", action: "move_to", action_input: {} },
        timestamp: 1,
        sim_time: 0,
      },
    ];
    const gw = makeGateway({
      sessions: [descriptor("s1", "running")],
      traces: { s1: trace },
    });
    gw.socket.open();
    await flush();
    const view = gw.client.state.sessions.s1;
    expect(view).toBeTruthy();
    expect(view.cards.map((c) => c.kind)).toEqual(["task", "step"]);
    expect(view.snapshot).toBeTruthy();
    expect(gw.client.state.tools).toHaveLength(1);
  });

  it("live events after backfill extend the timeline without duplicates", async () => {
    const trace = [
      { kind: "user_task", payload: "deliver", timestamp: 0, sim_time: 0 },
      {
        kind: "agent_step",
        payload: { message: "go", action: "move_to", action_input: {} },
        timestamp: 1,
        sim_time: 0,
      },
    ];
    const gw = makeGateway({ sessions: [descriptor("s1")], traces: { s1: trace } });
    gw.socket.open();
    await flush();
    // A replay of the backfilled step arrives live: must not duplicate.
    gw.pushEvent("agent_step", "s1", { entry: trace[1] });
    expect(gw.client.state.sessions.s1.stepCount).toBe(1);
    gw.pushEvent("agent_step", "s1", {
      entry: {
        kind: "agent_step",
        payload: { message: "grab", action: "grasp", action_input: {} },
        timestamp: 2,
        sim_time: 0,
      },
    });
    expect(gw.client.state.sessions.s1.stepCount).toBe(2);
  });

  it("reconnects after close and resyncs", async () => {
    const gw = makeGateway({ sessions: [descriptor("s1", "completed")] });
    gw.socket.open();
    await flush();
    expect(gw.client.state.connected).toBe(true);
    gw.socket.close();
    expect(gw.client.state.connected).toBe(false);
    await new Promise((resolve) => setTimeout(resolve, 10)); // reconnect delay
    // A fresh socket was created by the factory and opened by us:
    const latest = (gw.client as unknown as { socket: FakeSocket }).socket;
    expect(latest).not.toBe(gw.socket);
    latest.open();
    await flush();
    expect(gw.client.state.connected).toBe(true);
    expect(gw.client.state.sessions.s1.ended).toBe(true);
  });
});
