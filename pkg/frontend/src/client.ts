// Gateway connection: command/ack correlation, live event reduction, and
// reconnect with full state resync (list_sessions + get_trace backfill).

import { commandFrame, GatewayFrame, parseFrame, SessionDescriptor } from "./protocol.js";
import {
  applyFrame,
  applySessionList,
  applySnapshot,
  applyToolList,
  applyTrace,
  AppState,
  initialState,
} from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

interface Pending {
  resolve: (frame: GatewayFrame) => void;
  reject: (err: Error) => void;
}

export interface ClientOptions {
  socketFactory?: SocketFactory;
  reconnectDelayMs?: number;
  commandTimeoutMs?: number;
  onChange?: (state: AppState) => void;
}

export class GatewayClient {
  state: AppState = initialState();

  private url: string;
  private factory: SocketFactory;
  private socket: SocketLike | null = null;
  private seq = 0;
  private pending = new Map<number, Pending>();
  private onChange: (state: AppState) => void;
  private reconnectDelayMs: number;
  private commandTimeoutMs: number;
  private closed = false;
  private reconnectAttempts = 0;

  constructor(url: string, options: ClientOptions = {}) {
    this.url = url;
    this.factory = options.socketFactory ?? ((u) => new WebSocket(u) as unknown as SocketLike);
    this.onChange = options.onChange ?? (() => {});
    this.reconnectDelayMs = options.reconnectDelayMs ?? 1000;
    this.commandTimeoutMs = options.commandTimeoutMs ?? 10000;
  }

  connect(): void {
    if (this.closed) return;
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.reconnectAttempts = 0;
      this.state.connected = true;
      // Per-connection event seq restarts with the socket.
      this.state.lastEventSeq = 0;
      this.state.seqGap = false;
      this.emit();
      void this.resync();
    };
    socket.onmessage = (ev) => this.handleMessage(String(ev.data));
    socket.onerror = () => {};
    socket.onclose = () => {
      this.state.connected = false;
      this.emit();
      for (const [, pending] of this.pending) pending.reject(new Error("connection closed"));
      this.pending.clear();
      if (!this.closed) {
        const delay = Math.min(this.reconnectDelayMs * 2 ** this.reconnectAttempts, 15000);
        this.reconnectAttempts += 1;
        setTimeout(() => this.connect(), delay);
      }
    };
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }

  private emit(): void {
    this.onChange(this.state);
  }

  private handleMessage(raw: string): void {
    const frame = parseFrame(raw);
    if (frame === null) return;
    if (frame.kind === "ack" || frame.kind === "error") {
      const pending = this.pending.get(frame.seq);
      if (pending) {
        this.pending.delete(frame.seq);
        pending.resolve(frame);
      }
      return;
    }
    applyFrame(this.state, frame);
    if (this.state.seqGap) {
      this.state.seqGap = false;
      void this.resync();
    }
    this.emit();
  }

  /** Send one command; resolves with the matching ack or error frame. */
  command(type: string, payload: Record<string, unknown> = {}): Promise<GatewayFrame> {
    const socket = this.socket;
    if (!socket || !this.state.connected) {
      return Promise.reject(new Error("not connected"));
    }
    this.seq += 1;
    const seq = this.seq;
    return new Promise((resolve, reject) => {
      this.pending.set(seq, { resolve, reject });
      setTimeout(() => {
        if (this.pending.delete(seq)) reject(new Error(`command ${type} timed out`));
      }, this.commandTimeoutMs);
      socket.send(commandFrame(type, seq, payload));
    });
  }

  /** Rebuild full state from the gateway: session list, traces, snapshots,
   * tool catalog. Run on every (re)connect and on event-seq gaps. */
  async resync(): Promise<void> {
    try {
      const tools = await this.command("list_tools");
      if (tools.kind === "ack") {
        applyToolList(this.state, (tools.payload.tools as never) ?? []);
      }
      const reply = await this.command("list_sessions");
      if (reply.kind !== "ack") return;
      const sessions = (reply.payload.sessions as SessionDescriptor[]) ?? [];
      applySessionList(this.state, sessions);
      for (const descriptor of sessions) {
        const trace = await this.command("get_trace", { session_id: descriptor.session_id });
        if (trace.kind === "ack") {
          applyTrace(this.state, descriptor.session_id, (trace.payload.entries as never) ?? []);
        }
        const snapshot = await this.command("get_snapshot", {
          session_id: descriptor.session_id,
        });
        if (snapshot.kind === "ack") {
          applySnapshot(this.state, descriptor.session_id, snapshot.payload.snapshot as never);
        }
      }
      this.emit();
    } catch {
      // Connection dropped mid-resync; the reconnect path will retry.
    }
  }
}
