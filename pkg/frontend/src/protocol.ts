// Gateway wire protocol: one JSON frame per WebSocket message.
// Mirrors src/agentloop/docs/gateway_protocol.md on the server side.

export type FrameKind = "command" | "event" | "ack" | "error";

export interface GatewayFrame {
  kind: FrameKind;
  type: string;
  session_id?: string | null;
  seq: number;
  payload: Record<string, unknown>;
}

export interface SessionDescriptor {
  session_id: string;
  task_id: string;
  agent_kind: string;
  status: string;
  created_at: number;
}

export type EntryKind = "user_task" | "agent_step" | "observation" | "interjection" | "final";

export interface HistoryEntryDto {
  kind: EntryKind;
  payload: unknown;
  timestamp: number;
  sim_time: number;
}

export interface ObservationPayload {
  source_tool: string;
  content: string;
  data: Record<string, unknown> | null;
  is_error: boolean;
  sim_elapsed: number;
}

export interface AgentMessagePayload {
  message: string;
  action: string;
  action_input: Record<string, unknown>;
}

export interface ToolInfo {
  name: string;
  description: string;
  enabled: boolean;
}

export interface WorldSnapshot {
  bounds: { min: number[]; max: number[] };
  robot: { kind: string; pose: number[]; speed: number; yaw_rate: number; reach: number };
  fov: { half_angle_deg: number; range_m: number };
  entities: { id: string; class: string; x: number; y: number; z: number; graspable: boolean }[];
  origin: number[];
  held_entity: string | null;
  sim_clock: number;
}

export interface TokenUsageDto {
  prompt_tokens: number;
  completion_tokens: number;
  total: number;
}

/** Parse one wire message; null when it is not a well-formed frame. */
export function parseFrame(raw: string): GatewayFrame | null {
  let value: unknown;
  try {
    value = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof value !== "object" || value === null) return null;
  const frame = value as Record<string, unknown>;
  if (
    typeof frame.kind !== "string" ||
    !["command", "event", "ack", "error"].includes(frame.kind) ||
    typeof frame.type !== "string" ||
    typeof frame.seq !== "number"
  ) {
    return null;
  }
  return {
    kind: frame.kind as FrameKind,
    type: frame.type,
    session_id: (frame.session_id as string | null | undefined) ?? null,
    seq: frame.seq,
    payload: (frame.payload as Record<string, unknown>) ?? {},
  };
}

export function commandFrame(
  type: string,
  seq: number,
  payload: Record<string, unknown>,
): string {
  return JSON.stringify({ kind: "command", type, seq, payload });
}

export function isObservationPayload(value: unknown): value is ObservationPayload {
  return (
    typeof value === "object" &&
    value !== null &&
    typeof (value as ObservationPayload).source_tool === "string" &&
    typeof (value as ObservationPayload).content === "string"
  );
}

export function isAgentMessagePayload(value: unknown): value is AgentMessagePayload {
  return (
    typeof value === "object" &&
    value !== null &&
    typeof (value as AgentMessagePayload).action === "string"
  );
}
