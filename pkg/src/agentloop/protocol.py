"""Agent wire contract: system-prompt assembly, the JSON agent-message schema,
parsing/validation with self-repair hints, and history rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterable, Literal

from agentloop.toolset import Observation, ToolSpec, catalog_block

if TYPE_CHECKING:
    from agentloop.session import HistoryEntry

# Reserved action names.  final_response carries a `report` field in its
# action_input; abort carries a `reason`.
FINAL_ACTION = "final_response"
ABORT_ACTION = "abort"

# Marker prepended to every observation segment so the model can tell tool
# feedback apart from user input.
OBSERVATION_MARKER = "Observation: "

Role = Literal["system", "user", "assistant", "observation"]

FailureKind = Literal["malformed-syntax", "missing-field", "wrong-field-order"]
MALFORMED_SYNTAX: FailureKind = "malformed-syntax"
MISSING_FIELD: FailureKind = "missing-field"
WRONG_FIELD_ORDER: FailureKind = "wrong-field-order"


@dataclass(frozen=True)
class Segment:
    """One role-tagged piece of prompt text."""

    role: Role
    text: str


@dataclass(frozen=True)
class AgentMessage:
    """One agent step: free-text reasoning plus an action and its input.

    The serialized form always emits ``message`` before ``action`` — the
    reasoning must be produced before the action it justifies.
    """

    message: str
    action: str
    action_input: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.action:
            raise ValueError("action must be non-empty")
        if not isinstance(self.action_input, dict):
            raise ValueError("action_input must be a record")

    def to_dict(self) -> dict[str, Any]:
        return {
            "message": self.message,
            "action": self.action,
            "action_input": self.action_input,
        }


def serialize_agent_message(msg: AgentMessage) -> str:
    """Canonical wire form: one JSON object, keys in the order
    message, action, action_input."""
    # History rendering re-serializes every past step on every prompt build;
    # cache the wire form on the (frozen) instance to keep that linear.
    cached = msg.__dict__.get("_wire_form")
    if cached is None:
        cached = json.dumps(msg.to_dict(), ensure_ascii=False)
        object.__setattr__(msg, "_wire_form", cached)
    return cached


@dataclass(frozen=True)
class ParseFailure:
    kind: FailureKind
    hint: str

    def __post_init__(self) -> None:
        if not self.hint:
            raise ValueError("correction hint must be non-empty")


@dataclass(frozen=True)
class ParseOutcome:
    """Either a valid AgentMessage or a ParseFailure, never both.

    ``extra_keys`` lists unknown top-level keys that were tolerated on an
    otherwise valid message.
    """

    message: AgentMessage | None = None
    failure: ParseFailure | None = None
    extra_keys: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if (self.message is None) == (self.failure is None):
            raise ValueError("exactly one of message/failure must be set")

    @property
    def ok(self) -> bool:
        return self.message is not None


def _fail(kind: FailureKind, hint: str) -> ParseOutcome:
    return ParseOutcome(failure=ParseFailure(kind=kind, hint=hint))


_JSON_HINT = (
    'Reply with exactly one JSON object of the form {"message": "...", '
    '"action": "...", "action_input": {...}} and nothing else.'
)


def extract_json_object(raw: str) -> str | None:
    """Return the first balanced ``{...}`` region of raw text, tolerating
    surrounding prose and code fences.  None when no balanced object exists."""
    start = raw.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(raw)):
        ch = raw[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return raw[start : i + 1]
    return None


def parse_agent_message(raw: str | bytes) -> ParseOutcome:
    """Parse arbitrary model output into an AgentMessage.

    Never raises: any defect comes back as a ParseFailure whose hint can be
    fed to the model for self-repair.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    if not isinstance(raw, str):
        return _fail(MALFORMED_SYNTAX, _JSON_HINT)

    candidate = extract_json_object(raw)
    if candidate is None:
        return _fail(MALFORMED_SYNTAX, "No JSON object found in the reply. " + _JSON_HINT)
    try:
        obj = json.loads(candidate)
    except (json.JSONDecodeError, RecursionError):
        return _fail(MALFORMED_SYNTAX, "The reply is not valid JSON. " + _JSON_HINT)
    if not isinstance(obj, dict):
        return _fail(MALFORMED_SYNTAX, "The reply must be a JSON object. " + _JSON_HINT)

    keys = list(obj.keys())
    if "action" not in keys:
        return _fail(MISSING_FIELD, 'The "action" field is missing. ' + _JSON_HINT)
    if "message" not in keys:
        return _fail(MISSING_FIELD, 'The "message" field is missing. ' + _JSON_HINT)
    if keys.index("action") < keys.index("message"):
        return _fail(
            WRONG_FIELD_ORDER,
            'Output the "message" field before the "action" field: the reasoning '
            "must come before the action it justifies. " + _JSON_HINT,
        )

    message = obj["message"]
    if message is None:
        message = ""
    if not isinstance(message, str):
        return _fail(MISSING_FIELD, 'The "message" field must be a string. ' + _JSON_HINT)
    action = obj["action"]
    if not isinstance(action, str) or not action:
        return _fail(MISSING_FIELD, 'The "action" field must be a non-empty string. ' + _JSON_HINT)
    action_input = obj.get("action_input")
    if action_input is None:
        action_input = {}
    if not isinstance(action_input, dict):
        return _fail(
            MISSING_FIELD,
            'The "action_input" field must be a JSON object (use {} when the tool '
            "takes no parameters). " + _JSON_HINT,
        )

    extra = tuple(k for k in keys if k not in ("message", "action", "action_input"))
    return ParseOutcome(
        message=AgentMessage(message=message, action=action, action_input=action_input),
        extra_keys=extra,
    )


_OUTPUT_CONTRACT = f"""## Output format
Every reply must be exactly one JSON object with three keys, in this order:
  "message": your planning, assessment of the situation, and reasoning (may be empty),
  "action": the name of exactly one tool to invoke this step,
  "action_input": a JSON object with that tool's parameters ({{}} when none).
The "message" key must come before the "action" key. Do not write anything
outside the JSON object.
When the task is complete, use the action "{FINAL_ACTION}" with action_input
{{"report": "<your task completion report>"}}. If the task cannot proceed
further, use the action "{ABORT_ACTION}" with action_input
{{"reason": "<what blocks the task>"}}."""

_HISTORY_RULES = f"""## How to read the conversation
User messages carry the task and any mid-run guidance from the operator; obey
the most recent guidance. Your own earlier replies appear as assistant messages
in the same JSON form. Lines starting with "{OBSERVATION_MARKER.strip()}" are tool feedback
for your previous action; they are produced by the tools, not by the user."""


def render_system_prompt(
    tools: Iterable[ToolSpec],
    role_definition: str,
    extra_guidance: str = "",
) -> str:
    """Assemble the system prompt: output contract, enabled-tool catalog,
    history rules, and role definition, in that fixed order.  Non-empty
    ``extra_guidance`` is appended verbatim as a final section."""
    if not role_definition:
        raise ValueError("role_definition must be non-empty")
    blocks = [catalog_block(t) for t in tools if t.enabled]
    catalog = "\n".join(blocks) if blocks else "No tools are available for this task."
    sections = [
        _OUTPUT_CONTRACT,
        "## Tools\n" + catalog,
        _HISTORY_RULES,
        "## Role\n" + role_definition,
    ]
    if extra_guidance:
        sections.append("## Guidance\n" + extra_guidance)
    return "\n\n".join(sections)


def render_history(entries: Iterable[HistoryEntry]) -> list[Segment]:
    """Map chronological history entries onto role-tagged prompt segments.

    User tasks and interjections become user segments; agent steps become
    assistant segments re-serialized in the canonical key order; observations
    become observation segments behind the fixed marker.
    """
    segments: list[Segment] = []
    for entry in entries:
        payload = entry.payload
        if entry.kind in ("user_task", "interjection"):
            segments.append(Segment("user", str(payload)))
        elif entry.kind == "agent_step":
            if isinstance(payload, AgentMessage):
                text = serialize_agent_message(payload)
            else:
                text = str(payload)
            segments.append(Segment("assistant", text))
        elif entry.kind == "observation":
            content = payload.content if isinstance(payload, Observation) else str(payload)
            segments.append(Segment("observation", OBSERVATION_MARKER + content))
        elif entry.kind == "final":
            segments.append(Segment("assistant", str(payload)))
        else:
            raise ValueError(f"unknown history entry kind {entry.kind!r}")
    return segments
