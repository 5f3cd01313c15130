"""The agent loop: prompt -> model -> parse -> tool dispatch -> observation ->
history, with mid-run interjection intake, a parse-retry budget, and
termination handling."""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal

from agentloop.llm import ChatModel, ChatRequest, ModelError, ScriptExhausted, TokenUsage
from agentloop.protocol import (
    ABORT_ACTION,
    FINAL_ACTION,
    AgentMessage,
    Segment,
    parse_agent_message,
    render_history,
    render_system_prompt,
)
from agentloop.toolset import Observation, ToolRegistry

EntryKind = Literal["user_task", "agent_step", "observation", "interjection", "final"]

SessionStatus = Literal[
    "completed", "aborted_by_agent", "step_limit", "unrecoverable_parse", "cancelled"
]

AgentKind = Literal["leo", "das", "cge", "dllms", "tllms"]

# Source tag for the synthetic observations that carry parse-repair hints.
FORMAT_CHECKER = "format_checker"


class SessionFinishedError(Exception):
    pass


class SystemClock:
    """Wall time via a monotonic reading."""

    def now(self) -> float:
        return time.monotonic()


class LogicalClock:
    """Deterministic clock for scripted runs: each reading advances a fixed
    tick, so timestamps and wall times are bit-reproducible."""

    def __init__(self, tick: float = 0.001) -> None:
        self._t = 0.0
        self._tick = tick

    def now(self) -> float:
        t = self._t
        self._t = round(self._t + self._tick, 9)
        return t


@dataclass
class HistoryEntry:
    kind: EntryKind
    payload: AgentMessage | Observation | str
    timestamp: float
    sim_time: float

    def to_dict(self) -> dict[str, Any]:
        if isinstance(self.payload, AgentMessage):
            payload: Any = self.payload.to_dict()
        elif isinstance(self.payload, Observation):
            payload = self.payload.to_dict()
        else:
            payload = self.payload
        return {
            "kind": self.kind,
            "payload": payload,
            "timestamp": self.timestamp,
            "sim_time": self.sim_time,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> HistoryEntry:
        kind = d["kind"]
        raw = d["payload"]
        payload: AgentMessage | Observation | str
        if kind == "agent_step" and isinstance(raw, dict) and "action" in raw:
            payload = AgentMessage(
                message=raw.get("message", ""),
                action=raw["action"],
                action_input=raw.get("action_input") or {},
            )
        elif kind == "observation" and isinstance(raw, dict):
            payload = Observation.from_dict(raw)
        else:
            payload = raw if isinstance(raw, str) else json.dumps(raw)
        return cls(
            kind=kind,
            payload=payload,
            timestamp=float(d["timestamp"]),
            sim_time=float(d["sim_time"]),
        )


@dataclass
class SessionConfig:
    role_definition: str
    max_steps: int = 40
    max_parse_retries: int = 3
    extra_guidance: str = ""
    agent_kind: AgentKind = "leo"
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def validate(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_parse_retries < 1:
            raise ValueError("max_parse_retries must be >= 1")
        if not self.role_definition:
            raise ValueError("role_definition must be non-empty")


@dataclass
class SessionResult:
    status: SessionStatus
    final_report: str
    history: list[HistoryEntry]
    token_usage: TokenUsage
    wall_time: float
    sim_time: float
    model_latency: float = 0.0


class Session:
    """One agent run over one world.

    The loop itself executes on a single thread (the caller of run/step);
    interject and cancel may be called from any thread and are applied only
    at step boundaries, never mid-call.
    """

    def __init__(
        self,
        task_text: str,
        registry: ToolRegistry,
        model: ChatModel,
        world: Any,
        config: SessionConfig,
        clock: SystemClock | LogicalClock | None = None,
        on_entry: Callable[[HistoryEntry], None] | None = None,
    ) -> None:
        if not task_text:
            raise ValueError("task_text must be non-empty")
        config.validate()
        self.task_text = task_text
        self.registry = registry
        self.model = model
        self.world = world
        self.config = config
        self.clock = clock or SystemClock()
        self.on_entry = on_entry

        self.history: list[HistoryEntry] = []
        self._history_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._interjections: queue.Queue[str] = queue.Queue()
        self._cancel_requested = threading.Event()
        self._finished = threading.Event()
        self._result: SessionResult | None = None
        self._running = False

        self.sim_time = 0.0
        self.token_usage = TokenUsage()
        self.model_latency = 0.0
        self.steps_taken = 0
        self._consecutive_parse_failures = 0
        self._started_at = self.clock.now()

        self._append("user_task", task_text)

    # -- state ------------------------------------------------------------

    @property
    def finished(self) -> bool:
        return self._finished.is_set()

    def result(self) -> SessionResult:
        if self._result is None:
            raise SessionFinishedError("session has not finished yet")
        return self._result

    def history_copy(self) -> list[HistoryEntry]:
        with self._history_lock:
            return list(self.history)

    def _append(self, kind: EntryKind, payload: AgentMessage | Observation | str) -> HistoryEntry:
        entry = HistoryEntry(
            kind=kind, payload=payload, timestamp=self.clock.now(), sim_time=self.sim_time
        )
        with self._history_lock:
            self.history.append(entry)
        if self.on_entry is not None:
            self.on_entry(entry)
        return entry

    def _finalize(self, status: SessionStatus, final_report: str) -> SessionResult:
        with self._state_lock:
            if self._result is None:
                self._result = SessionResult(
                    status=status,
                    final_report=final_report,
                    history=self.history_copy(),
                    token_usage=self.token_usage,
                    wall_time=self.clock.now() - self._started_at,
                    sim_time=self.sim_time,
                    model_latency=self.model_latency,
                )
                self._finished.set()
        return self._result

    # -- outside-thread controls ------------------------------------------

    def interject(self, user_text: str) -> None:
        """Queue operator text; it lands in history as an interjection entry
        before the next agent step that begins after this call returns."""
        if not user_text:
            raise ValueError("interjection text must be non-empty")
        with self._state_lock:
            if self._finished.is_set():
                raise SessionFinishedError("cannot interject into a finished session")
            self._interjections.put(user_text)

    def request_cancel(self) -> None:
        """Ask the session to stop at the next step boundary (non-blocking)."""
        with self._state_lock:
            if self._finished.is_set():
                raise SessionFinishedError("session already finished")
            self._cancel_requested.set()

    def cancel(self, timeout: float | None = None) -> SessionResult:
        """Stop at the next step boundary and return the partial result.

        A session that was never started finalizes immediately.
        """
        self.request_cancel()
        if not self._running:
            return self._finalize("cancelled", "cancelled before first step")
        if not self._finished.wait(timeout):
            raise TimeoutError("session did not reach a step boundary in time")
        return self.result()

    # -- the loop ----------------------------------------------------------

    def _drain_interjections(self) -> None:
        while True:
            try:
                text = self._interjections.get_nowait()
            except queue.Empty:
                return
            self._append("interjection", text)

    def _build_request(self) -> ChatRequest:
        system = render_system_prompt(
            self.registry.specs(), self.config.role_definition, self.config.extra_guidance
        )
        segments = [Segment("system", system)] + render_history(self.history)
        return ChatRequest(
            segments=segments,
            temperature=self.config.temperature,
            max_output_tokens=self.config.max_output_tokens,
        )

    def _complete_once(self) -> str:
        """One model call with accounting.  ModelErrors propagate."""
        t0 = self.clock.now()
        try:
            text, usage = self.model.complete(self._build_request())
        finally:
            self.model_latency += self.clock.now() - t0
        self.token_usage = self.token_usage + usage
        return text

    def _obtain_message(self) -> AgentMessage | SessionResult:
        """Call the model until a parseable AgentMessage arrives, feeding
        correction hints back as observation entries.  Returns a terminal
        result when the retry budget is exhausted or the backend fails."""
        while True:
            try:
                text = self._complete_once()
            except ScriptExhausted as exc:
                return self._finalize("unrecoverable_parse", f"model backend failed: {exc}")
            except ModelError as exc:
                self._consecutive_parse_failures += 1
                if self._consecutive_parse_failures >= self.config.max_parse_retries:
                    return self._finalize(
                        "unrecoverable_parse", f"model backend failed: {exc}"
                    )
                continue
            outcome = parse_agent_message(text)
            if outcome.ok:
                self._consecutive_parse_failures = 0
                return outcome.message
            self._consecutive_parse_failures += 1
            failure = outcome.failure
            if self._consecutive_parse_failures >= self.config.max_parse_retries:
                return self._finalize(
                    "unrecoverable_parse",
                    f"unparseable model output after {self._consecutive_parse_failures} "
                    f"attempts ({failure.kind})",
                )
            self._append(
                "observation",
                Observation(
                    source_tool=FORMAT_CHECKER,
                    content=f"Your last reply could not be used ({failure.kind}). {failure.hint}",
                    is_error=True,
                ),
            )

    def step(self) -> SessionResult | None:
        """One full cycle.  Returns the terminal result, or None to continue."""
        if self._finished.is_set():
            return self._result
        if self._cancel_requested.is_set():
            return self._finalize("cancelled", "cancelled by operator")
        self._drain_interjections()

        got = self._obtain_message()
        if isinstance(got, SessionResult):
            return got
        msg = got

        self._append("agent_step", msg)
        self.steps_taken += 1

        if msg.action == FINAL_ACTION:
            report = _text_field(msg.action_input, "report") or msg.message or "task completed"
            self._append("final", report)
            return self._finalize("completed", report)
        if msg.action == ABORT_ACTION:
            reason = _text_field(msg.action_input, "reason") or msg.message or "aborted"
            self._append("final", reason)
            return self._finalize("aborted_by_agent", reason)

        obs = self.registry.invoke(msg.action, msg.action_input, self.world)
        self.sim_time += obs.sim_elapsed
        self.token_usage = self.token_usage + tool_reported_usage(obs)
        self._append("observation", obs)

        if self.steps_taken >= self.config.max_steps:
            return self._finalize("step_limit", f"step limit ({self.config.max_steps}) reached")
        return None

    def run(self) -> SessionResult:
        self._running = True
        try:
            while True:
                result = self.step()
                if result is not None:
                    return result
        finally:
            self._running = False


def tool_reported_usage(obs: Observation) -> TokenUsage:
    """Model spend reported by a tool (e.g. an auxiliary-LLM tool) through its
    observation data; counted into the session so no call goes unaccounted."""
    record = (obs.data or {}).get("token_usage")
    if not isinstance(record, dict):
        return TokenUsage()
    return TokenUsage(
        prompt_tokens=int(record.get("prompt_tokens", 0)),
        completion_tokens=int(record.get("completion_tokens", 0)),
    )


def _text_field(record: dict[str, Any], key: str) -> str:
    value = record.get(key)
    if isinstance(value, str):
        return value
    if value is None:
        return ""
    return json.dumps(value)


def run_session(
    task_text: str,
    registry: ToolRegistry,
    model: ChatModel,
    world: Any,
    config: SessionConfig,
    clock: SystemClock | LogicalClock | None = None,
    on_entry: Callable[[HistoryEntry], None] | None = None,
) -> SessionResult:
    """Run one session to completion and return its result."""
    return Session(task_text, registry, model, world, config, clock, on_entry).run()


# -- trace persistence ----------------------------------------------------
# One HistoryEntry per line; this JSON-lines form is the replay and scoring
# input format.

def save_trace(history: list[HistoryEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")


def load_trace(path: str | Path) -> list[HistoryEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(HistoryEntry.from_dict(json.loads(line)))
    return entries
