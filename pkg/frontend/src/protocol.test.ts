import { describe, expect, it } from "vitest";

import { commandFrame, parseFrame } from "./protocol.js";

describe("parseFrame", () => {
  it("parses a well-formed event frame", () => {
    const frame = parseFrame(
      JSON.stringify({ kind: "event", type: "agent_step", session_id: "s1", seq: 3, payload: { a: 1 } }),
    );
    expect(frame).toMatchObject({ kind: "event", type: "agent_step", session_id: "s1", seq: 3 });
  });

  it("defaults a missing payload to an empty object", () => {
    const frame = parseFrame(JSON.stringify({ kind: "ack", type: "list_tools", seq: 1 }));
    expect(frame?.payload).toEqual({});
  });

  it("returns null for garbage and wrong shapes", () => {
    expect(parseFrame("not json")).toBeNull();
    expect(parseFrame('"just a string"')).toBeNull();
    expect(parseFrame(JSON.stringify({ kind: "telegram", type: "x", seq: 1 }))).toBeNull();
    expect(parseFrame(JSON.stringify({ kind: "event", type: "x" }))).toBeNull();
  });
});

describe("commandFrame", () => {
  it("emits the documented command shape", () => {
    const parsed = JSON.parse(commandFrame("interject", 7, { session_id: "s1", text: "hi" }));
    expect(parsed).toEqual({
      kind: "command",
      type: "interject",
      seq: 7,
      payload: { session_id: "s1", text: "hi" },
    });
  });
});
