// Console state: a pure reducer over gateway frames and resync payloads.
// Everything here is reconstructible from gateway responses alone, so a
// refresh mid-session rebuilds an identical view.

import {
  GatewayFrame,
  HistoryEntryDto,
  SessionDescriptor,
  TokenUsageDto,
  ToolInfo,
  WorldSnapshot,
  isAgentMessagePayload,
  isObservationPayload,
} from "./protocol.js";

export interface TaskCard {
  kind: "task";
  text: string;
}

export interface StepCard {
  kind: "step";
  message: string;
  action: string;
  actionInput: Record<string, unknown>;
}

export interface ObservationCard {
  kind: "observation";
  sourceTool: string;
  content: string;
  isError: boolean;
  simElapsed: number;
}

export interface InterjectionCard {
  kind: "interjection";
  text: string;
}

export interface EndedCard {
  kind: "ended";
  status: string;
  finalReport: string;
}

export type TimelineCard = TaskCard | StepCard | ObservationCard | InterjectionCard | EndedCard;

export interface PathPoint {
  x: number;
  y: number;
  yaw: number;
}

export interface SessionView {
  descriptor: SessionDescriptor;
  taskText: string;
  cards: TimelineCard[];
  stepCount: number;
  tokenTotal: number;
  finalTokenUsage: TokenUsageDto | null;
  tokenMismatch: boolean;
  simTime: number;
  snapshot: WorldSnapshot | null;
  path: PathPoint[];
  ended: boolean;
  // Timestamp of the newest applied history entry; events replaying older
  // entries (e.g. around a backfill) are dropped as duplicates.
  watermark: number;
}

export interface AppState {
  connected: boolean;
  sessions: Record<string, SessionView>;
  sessionOrder: string[];
  selected: string | null;
  tools: ToolInfo[];
  droppedSnapshots: number;
  lastEventSeq: number;
  seqGap: boolean;
}

export function initialState(): AppState {
  return {
    connected: false,
    sessions: {},
    sessionOrder: [],
    selected: null,
    tools: [],
    droppedSnapshots: 0,
    lastEventSeq: 0,
    seqGap: false,
  };
}

function emptyView(descriptor: SessionDescriptor): SessionView {
  return {
    descriptor,
    taskText: "",
    cards: [],
    stepCount: 0,
    tokenTotal: 0,
    finalTokenUsage: null,
    tokenMismatch: false,
    simTime: 0,
    snapshot: null,
    path: [],
    ended: false,
    watermark: -Infinity,
  };
}

function ensureSession(state: AppState, descriptor: SessionDescriptor): SessionView {
  const existing = state.sessions[descriptor.session_id];
  if (existing) return existing;
  const view = emptyView(descriptor);
  state.sessions[descriptor.session_id] = view;
  state.sessionOrder.push(descriptor.session_id);
  if (state.selected === null) state.selected = descriptor.session_id;
  return view;
}

function pathPointFromSnapshot(snapshot: WorldSnapshot): PathPoint {
  const [x, y, , yaw] = snapshot.robot.pose;
  return { x, y, yaw };
}

/** Convert one history entry into timeline cards and update view counters. */
function applyEntry(view: SessionView, entry: HistoryEntryDto): void {
  if (entry.timestamp <= view.watermark) return; // duplicate of backfilled data
  view.watermark = entry.timestamp;
  view.simTime = Math.max(view.simTime, entry.sim_time);
  switch (entry.kind) {
    case "user_task":
      view.taskText = String(entry.payload);
      view.cards.push({ kind: "task", text: String(entry.payload) });
      return;
    case "agent_step":
      if (isAgentMessagePayload(entry.payload)) {
        view.cards.push({
          kind: "step",
          message: entry.payload.message,
          action: entry.payload.action,
          actionInput: entry.payload.action_input ?? {},
        });
      } else {
        view.cards.push({
          kind: "step",
          message: String(entry.payload),
          action: "",
          actionInput: {},
        });
      }
      view.stepCount += 1;
      return;
    case "observation":
      if (isObservationPayload(entry.payload)) {
        view.cards.push({
          kind: "observation",
          sourceTool: entry.payload.source_tool,
          content: entry.payload.content,
          isError: entry.payload.is_error,
          simElapsed: entry.payload.sim_elapsed,
        });
        view.simTime = Math.max(view.simTime, entry.sim_time + entry.payload.sim_elapsed);
      }
      return;
    case "interjection":
      view.cards.push({ kind: "interjection", text: String(entry.payload) });
      return;
    case "final":
      // The report text arrives again with session_ended; nothing to add here.
      return;
  }
}

/** Apply one gateway event frame. Unknown event types are ignored. */
export function applyFrame(state: AppState, frame: GatewayFrame): AppState {
  if (frame.kind !== "event") return state;
  if (frame.seq <= state.lastEventSeq) return state; // stale duplicate
  if (state.lastEventSeq > 0 && frame.seq !== state.lastEventSeq + 1) {
    state.seqGap = true; // the client resyncs when it sees this
  }
  state.lastEventSeq = frame.seq;

  const payload = frame.payload;
  switch (frame.type) {
    case "session_started": {
      const descriptor = payload.descriptor as SessionDescriptor;
      if (!descriptor) return state;
      const view = ensureSession(state, descriptor);
      view.descriptor = descriptor;
      if (payload.task_text && view.cards.length === 0) {
        applyEntry(view, {
          kind: "user_task",
          payload: payload.task_text,
          timestamp: 0,
          sim_time: 0,
        });
      }
      return state;
    }
    case "agent_step": {
      const view = frame.session_id ? state.sessions[frame.session_id] : undefined;
      if (!view) return state;
      applyEntry(view, payload.entry as HistoryEntryDto);
      if (typeof payload.token_total === "number") {
        view.tokenTotal = Math.max(view.tokenTotal, payload.token_total);
      }
      return state;
    }
    case "observation": {
      const view = frame.session_id ? state.sessions[frame.session_id] : undefined;
      if (view) applyEntry(view, payload.entry as HistoryEntryDto);
      return state;
    }
    case "interjection_applied": {
      const view = frame.session_id ? state.sessions[frame.session_id] : undefined;
      if (view) applyEntry(view, payload.entry as HistoryEntryDto);
      return state;
    }
    case "session_ended": {
      const view = frame.session_id ? state.sessions[frame.session_id] : undefined;
      if (!view || view.ended) return state;
      view.ended = true;
      view.descriptor.status = String(payload.status ?? "completed");
      const usage = payload.token_usage as TokenUsageDto | undefined;
      view.finalTokenUsage = usage ?? null;
      if (usage && view.tokenTotal > 0 && usage.total !== view.tokenTotal) {
        view.tokenMismatch = true;
      } else if (usage) {
        view.tokenTotal = usage.total;
      }
      view.cards.push({
        kind: "ended",
        status: view.descriptor.status,
        finalReport: String(payload.final_report ?? ""),
      });
      return state;
    }
    case "world_snapshot": {
      const view = frame.session_id ? state.sessions[frame.session_id] : undefined;
      const snapshot = payload.snapshot as WorldSnapshot | undefined;
      if (view && snapshot) {
        view.snapshot = snapshot;
        const point = pathPointFromSnapshot(snapshot);
        const last = view.path[view.path.length - 1];
        if (!last || last.x !== point.x || last.y !== point.y || last.yaw !== point.yaw) {
          view.path.push(point);
        }
      }
      return state;
    }
    case "tool_config_changed": {
      const name = String(payload.name ?? "");
      const enabled = Boolean(payload.enabled);
      const tool = state.tools.find((t) => t.name === name);
      if (tool) tool.enabled = enabled;
      return state;
    }
    case "snapshots_dropped": {
      state.droppedSnapshots += Number(payload.dropped ?? 0);
      return state;
    }
    default:
      return state; // forward compatibility: unknown events are ignored
  }
}

// -- resync (command ack payloads) -------------------------------------------

export function applySessionList(state: AppState, sessions: SessionDescriptor[]): AppState {
  for (const descriptor of sessions) {
    const view = ensureSession(state, descriptor);
    view.descriptor = descriptor;
    if (descriptor.status !== "running") view.ended = true;
  }
  return state;
}

export function applyToolList(state: AppState, tools: ToolInfo[]): AppState {
  state.tools = tools;
  return state;
}

/** Rebuild a session's timeline from a full trace: no gaps, no duplicates. */
export function applyTrace(
  state: AppState,
  sessionId: string,
  entries: HistoryEntryDto[],
): AppState {
  const view = state.sessions[sessionId];
  if (!view) return state;
  const kept = { tokenTotal: view.tokenTotal, finalTokenUsage: view.finalTokenUsage };
  const fresh = emptyView(view.descriptor);
  Object.assign(view, fresh, kept, { descriptor: view.descriptor });
  for (const entry of entries) applyEntry(view, entry);
  if (view.descriptor.status !== "running") {
    view.ended = true;
    const final = entries.filter((e) => e.kind === "final").pop();
    view.cards.push({
      kind: "ended",
      status: view.descriptor.status,
      finalReport: final ? String(final.payload) : "",
    });
  }
  return state;
}

export function applySnapshot(
  state: AppState,
  sessionId: string,
  snapshot: WorldSnapshot,
): AppState {
  const view = state.sessions[sessionId];
  if (view) {
    view.snapshot = snapshot;
    const point = pathPointFromSnapshot(snapshot);
    if (view.path.length === 0) view.path.push(point);
  }
  return state;
}
