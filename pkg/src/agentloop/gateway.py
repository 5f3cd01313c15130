"""WebSocket gateway: bridges running sessions onto the topic bus and exposes
session control, world snapshots, and tool configuration to external clients
(the operator console connects here)."""

from __future__ import annotations

import json
import logging
import mimetypes
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from websockets.datastructures import Headers
from websockets.http11 import Response
from websockets.sync.server import serve as ws_serve

from agentloop import tools as toolkits
from agentloop.bus import TopicBus
from agentloop.harness import run_agent
from agentloop.llm import ScriptedModel, model_from_spec
from agentloop.protocol import AgentMessage, serialize_agent_message
from agentloop.session import (
    HistoryEntry,
    LogicalClock,
    Session,
    SessionFinishedError,
    SystemClock,
)
from agentloop.simworld import load_scenario
from agentloop.tasks import TaskSpec, builtin_tasks, registry_for_task
from agentloop.toolset import ToolRegistry, UnknownToolError

logger = logging.getLogger(__name__)

COMMANDS = (
    "start_task",
    "interject",
    "cancel",
    "set_tool_enabled",
    "list_tools",
    "list_sessions",
    "get_snapshot",
    "get_trace",
)


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 0  # 0 = pick a free port
    snapshot_hz: float = 2.0
    max_queue: int = 1000
    static_dir: str | Path | None = None


class GatewayError(Exception):
    pass


@dataclass
class _SessionRuntime:
    session_id: str
    task_id: str
    agent_kind: str
    created_at: float
    world: Any
    registry: ToolRegistry
    model: Any
    session: Session | None  # leo sessions only
    cancel_event: threading.Event
    status: str = "running"
    final_report: str = ""
    entries: list[HistoryEntry] = field(default_factory=list)
    entries_lock: threading.Lock = field(default_factory=threading.Lock)
    last_snapshot: dict[str, Any] | None = None
    last_snapshot_pub: float = 0.0
    thread: threading.Thread | None = None

    def descriptor(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "task_id": self.task_id,
            "agent_kind": self.agent_kind,
            "status": self.status,
            "created_at": self.created_at,
        }


class Gateway:
    """Runtime behind the WebSocket endpoint: session registry, tool
    configuration overrides, and the bus bridge."""

    def __init__(self, tasks: dict[str, TaskSpec] | None = None, snapshot_hz: float = 2.0):
        self.bus = TopicBus()
        self.tasks = tasks if tasks is not None else builtin_tasks()
        self.snapshot_hz = snapshot_hz
        self._sessions: dict[str, _SessionRuntime] = {}
        self._lock = threading.Lock()
        self._next_session = 1
        self._tool_overrides: dict[str, bool] = {}
        # Catalog template: the union toolset, for list_tools before any
        # session exists.  Summarize appears with a placeholder handler; real
        # sessions bind their own model.
        self._template: dict[str, str] = {}
        for spec in toolkits.uav_tools() + toolkits.wheeled_tools():
            self._template.setdefault(spec.name, spec.description)
        self._template.setdefault(
            "summarize",
            "Summarize a piece of text with an auxiliary language model. "
            'Input: {"text": string}. Output: the summary as plain text.',
        )

    # -- session lifecycle -------------------------------------------------

    def start_task(self, task_id: str, agent_kind: str, model_spec: str) -> dict[str, Any]:
        task = self.tasks.get(task_id)
        if task is None:
            raise GatewayError(f"unknown task {task_id!r} (have: {', '.join(sorted(self.tasks))})")
        if agent_kind not in ("leo", "das", "cge", "dllms", "tllms"):
            raise GatewayError(f"unknown agent kind {agent_kind!r}")
        try:
            model = model_from_spec(model_spec)
        except (ValueError, OSError) as exc:
            raise GatewayError(f"bad model spec: {exc}") from exc

        world = load_scenario(task.scenario_path)
        registry = registry_for_task(task, model, world.robot_kind)
        with self._lock:
            for name, flag in self._tool_overrides.items():
                if name in registry:
                    registry.set_enabled(name, flag)
            session_id = f"s{self._next_session}"
            self._next_session += 1

        runtime = _SessionRuntime(
            session_id=session_id,
            task_id=task_id,
            agent_kind=agent_kind,
            created_at=time.time(),
            world=world,
            registry=registry,
            model=model,
            session=None,
            cancel_event=threading.Event(),
        )
        with self._lock:
            self._sessions[session_id] = runtime

        scripted = isinstance(model, ScriptedModel)
        clock = LogicalClock() if scripted else SystemClock()
        config = task.session_config(agent_kind)

        def on_entry(entry: HistoryEntry) -> None:
            self._bridge_entry(runtime, entry)

        def runner() -> None:
            try:
                result = run_agent(
                    agent_kind,
                    task.task_prompt,
                    registry,
                    model,
                    world,
                    config,
                    clock,
                    on_entry,
                    cancel_event=runtime.cancel_event,
                    session_sink=lambda s: setattr(runtime, "session", s),
                )
                runtime.status = result.status
                runtime.final_report = result.final_report
                usage = {
                    "prompt_tokens": result.token_usage.prompt_tokens,
                    "completion_tokens": result.token_usage.completion_tokens,
                    "total": result.token_usage.total,
                }
            except Exception as exc:  # noqa: BLE001 - a crashed session must still end
                logger.exception("session %s crashed", session_id)
                runtime.status = "error"
                runtime.final_report = f"internal error: {exc}"
                usage = {"prompt_tokens": 0, "completion_tokens": 0, "total": 0}
            self.bus.publish(
                f"/session/{session_id}/steps",
                {
                    "type": "session_ended",
                    "session_id": session_id,
                    "payload": {
                        "status": runtime.status,
                        "final_report": runtime.final_report,
                        "token_usage": usage,
                    },
                },
            )

        thread = threading.Thread(target=runner, name=f"session-{session_id}", daemon=True)
        runtime.thread = thread
        thread.start()
        return runtime.descriptor()

    def _bridge_entry(self, runtime: _SessionRuntime, entry: HistoryEntry) -> None:
        """Publish one history entry to the session topics.  Runs on the
        session's own thread, so world access here is safe."""
        with runtime.entries_lock:
            runtime.entries.append(entry)
        sid = runtime.session_id
        topic = f"/session/{sid}/steps"
        if entry.kind == "user_task":
            runtime.last_snapshot = runtime.world.snapshot()
            self.bus.publish(
                topic,
                {
                    "type": "session_started",
                    "session_id": sid,
                    "payload": {
                        "descriptor": runtime.descriptor(),
                        "task_text": str(entry.payload),
                    },
                },
            )
            self._publish_snapshot(runtime, force=True)
            return
        if entry.kind == "final":
            # Content travels in the session_ended event.
            return
        if entry.kind == "agent_step":
            payload: dict[str, Any] = {"entry": entry.to_dict()}
            if isinstance(entry.payload, AgentMessage):
                payload["agent_message"] = serialize_agent_message(entry.payload)
            # Running spend so far, from the session's own model call log.
            log = getattr(runtime.model, "call_log", None)
            if log:
                payload["token_total"] = sum(u.total for u in log)
            self.bus.publish(topic, {"type": "agent_step", "session_id": sid, "payload": payload})
        elif entry.kind == "observation":
            self.bus.publish(
                topic,
                {"type": "observation", "session_id": sid, "payload": {"entry": entry.to_dict()}},
            )
            runtime.last_snapshot = runtime.world.snapshot()
            self._publish_snapshot(runtime)
        elif entry.kind == "interjection":
            self.bus.publish(
                topic,
                {
                    "type": "interjection_applied",
                    "session_id": sid,
                    "payload": {"text": str(entry.payload), "entry": entry.to_dict()},
                },
            )

    def _publish_snapshot(self, runtime: _SessionRuntime, force: bool = False) -> None:
        now = time.monotonic()
        min_gap = 1.0 / self.snapshot_hz if self.snapshot_hz > 0 else 0.0
        if not force and now - runtime.last_snapshot_pub < min_gap:
            return
        runtime.last_snapshot_pub = now
        self.bus.publish(
            f"/session/{runtime.session_id}/world",
            {
                "type": "world_snapshot",
                "session_id": runtime.session_id,
                "payload": {"snapshot": runtime.last_snapshot},
            },
        )

    def _runtime(self, session_id: str) -> _SessionRuntime:
        runtime = self._sessions.get(session_id)
        if runtime is None:
            raise GatewayError(f"unknown session {session_id!r}")
        return runtime

    # -- commands ------------------------------------------------------------

    def interject(self, session_id: str, text: str) -> None:
        runtime = self._runtime(session_id)
        if runtime.session is None:
            raise GatewayError(
                f"session {session_id!r} runs agent kind {runtime.agent_kind!r}, "
                "which does not accept interjections"
            )
        try:
            runtime.session.interject(text)
        except (SessionFinishedError, ValueError) as exc:
            raise GatewayError(str(exc)) from exc

    def cancel(self, session_id: str) -> None:
        runtime = self._runtime(session_id)
        if runtime.status != "running":
            raise GatewayError(f"session {session_id!r} already finished ({runtime.status})")
        runtime.cancel_event.set()
        if runtime.session is not None:
            try:
                runtime.session.request_cancel()
            except SessionFinishedError as exc:
                raise GatewayError(str(exc)) from exc

    def set_tool_enabled(self, name: str, flag: bool) -> None:
        if name not in self._template:
            raise GatewayError(f"unknown tool {name!r}")
        with self._lock:
            self._tool_overrides[name] = flag
            live = list(self._sessions.values())
        for runtime in live:
            if name in runtime.registry:
                try:
                    runtime.registry.set_enabled(name, flag)
                except UnknownToolError:
                    pass
        self.bus.publish(
            "/gateway/tools",
            {
                "type": "tool_config_changed",
                "session_id": None,
                "payload": {"name": name, "enabled": flag},
            },
        )

    def list_tools(self) -> list[dict[str, Any]]:
        with self._lock:
            overrides = dict(self._tool_overrides)
        return [
            {
                "name": name,
                "description": description,
                "enabled": overrides.get(name, True),
            }
            for name, description in self._template.items()
        ]

    def list_sessions(self) -> list[dict[str, Any]]:
        with self._lock:
            return [r.descriptor() for r in self._sessions.values()]

    def get_snapshot(self, session_id: str) -> dict[str, Any]:
        runtime = self._runtime(session_id)
        if runtime.last_snapshot is None:
            raise GatewayError(f"session {session_id!r} has no snapshot yet")
        return runtime.last_snapshot

    def get_trace(self, session_id: str) -> list[dict[str, Any]]:
        runtime = self._runtime(session_id)
        with runtime.entries_lock:
            return [entry.to_dict() for entry in runtime.entries]


# -- the WebSocket server ---------------------------------------------------------


class _ClientConn:
    """Per-connection outbound machinery: one writer thread draining a queue.

    Backpressure drops only world_snapshot frames (counted and reported);
    step, observation, and terminal frames are never dropped.
    """

    def __init__(self, ws: Any, max_queue: int) -> None:
        self.ws = ws
        self.max_queue = max_queue
        self.out: queue.Queue[dict[str, Any] | None] = queue.Queue()
        self.lock = threading.Lock()
        self.event_seq = 0
        self.dropped_snapshots = 0
        self.writer = threading.Thread(target=self._write_loop, daemon=True)
        self.writer.start()

    def _write_loop(self) -> None:
        while True:
            frame = self.out.get()
            if frame is None:
                return
            try:
                self.ws.send(json.dumps(frame))
            except Exception:  # connection gone; drain quietly
                return
            # Once the backlog clears, report how many snapshots it cost.
            with self.lock:
                if self.dropped_snapshots and self.out.qsize() == 0:
                    dropped = self.dropped_snapshots
                    self.dropped_snapshots = 0
                    self.event_seq += 1
                    self.out.put(
                        {
                            "kind": "event",
                            "type": "snapshots_dropped",
                            "session_id": None,
                            "seq": self.event_seq,
                            "payload": {"dropped": dropped},
                        }
                    )

    def send_event(self, event_type: str, session_id: str | None, payload: dict[str, Any]) -> None:
        with self.lock:
            if event_type == "world_snapshot" and self.out.qsize() >= self.max_queue:
                self.dropped_snapshots += 1
                return
            self.event_seq += 1
            frame = {
                "kind": "event",
                "type": event_type,
                "session_id": session_id,
                "seq": self.event_seq,
                "payload": payload,
            }
            self.out.put(frame)

    def send_reply(self, kind: str, command_type: str, seq: Any, payload: dict[str, Any]) -> None:
        with self.lock:
            self.out.put(
                {
                    "kind": kind,
                    "type": command_type,
                    "session_id": payload.get("session_id"),
                    "seq": seq,
                    "payload": payload,
                }
            )

    def close(self) -> None:
        self.out.put(None)


class GatewayServer:
    """A running gateway: WebSocket endpoint at /ws plus static file serving
    for the operator console at /."""

    def __init__(self, config: GatewayConfig, gateway: Gateway | None = None) -> None:
        self.config = config
        self.gateway = gateway or Gateway(snapshot_hz=config.snapshot_hz)
        self.gateway.snapshot_hz = config.snapshot_hz
        self._server = ws_serve(
            self._handle,
            config.host,
            config.port,
            process_request=self._process_request,
        )
        self.port = self._server.socket.getsockname()[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        return f"ws://{self.config.host}:{self.port}/ws"

    def stop(self) -> None:
        self._server.shutdown()

    # -- plain HTTP (console bundle) ---------------------------------------

    def _process_request(self, connection: Any, request: Any) -> Any:
        path = request.path.split("?", 1)[0]
        if path == "/ws":
            return None  # continue with the WebSocket handshake
        static_dir = self.config.static_dir
        if static_dir is None:
            if path == "/":
                return connection.respond(200, "agentloop gateway running; connect to /ws\n")
            return connection.respond(404, "not found\n")
        root = Path(static_dir).resolve()
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            return connection.respond(404, "not found\n")
        body = target.read_bytes()
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        headers = Headers(
            [("Content-Type", ctype), ("Content-Length", str(len(body)))]
        )
        return Response(200, "OK", headers, body)

    # -- WebSocket frames ------------------------------------------------------

    def _handle(self, ws: Any) -> None:
        conn = _ClientConn(ws, self.config.max_queue)

        def on_bus(topic: str, message: dict[str, Any]) -> None:
            conn.send_event(message["type"], message.get("session_id"), message.get("payload", {}))

        steps_sub = self.gateway.bus.subscribe("/session/#", on_bus)
        tools_sub = self.gateway.bus.subscribe("/gateway/#", on_bus)
        try:
            for raw in ws:
                self._dispatch(conn, raw)
        except Exception:
            pass
        finally:
            steps_sub.close()
            tools_sub.close()
            conn.close()

    def _dispatch(self, conn: _ClientConn, raw: str | bytes) -> None:
        try:
            frame = json.loads(raw)
        except (ValueError, TypeError):
            conn.send_reply("error", "malformed", 0, {"error": "frame is not valid JSON"})
            return
        if not isinstance(frame, dict) or frame.get("kind") != "command":
            conn.send_reply("error", "malformed", 0, {"error": "expected a command frame"})
            return
        command = frame.get("type")
        seq = frame.get("seq", 0)
        payload = frame.get("payload") or {}
        if not isinstance(payload, dict):
            conn.send_reply("error", str(command), seq, {"error": "payload must be an object"})
            return
        if command not in COMMANDS:
            conn.send_reply("error", str(command), seq, {"error": f"unknown command {command!r}"})
            return
        gw = self.gateway
        try:
            if command == "start_task":
                descriptor = gw.start_task(
                    str(payload.get("task_id", "")),
                    str(payload.get("agent_kind", "leo")),
                    str(payload.get("model", "")),
                )
                conn.send_reply("ack", command, seq, {"session_id": descriptor["session_id"],
                                                      "descriptor": descriptor})
            elif command == "interject":
                gw.interject(str(payload.get("session_id", "")), str(payload.get("text", "")))
                conn.send_reply("ack", command, seq, {"session_id": payload.get("session_id")})
            elif command == "cancel":
                gw.cancel(str(payload.get("session_id", "")))
                conn.send_reply("ack", command, seq, {"session_id": payload.get("session_id")})
            elif command == "set_tool_enabled":
                gw.set_tool_enabled(str(payload.get("name", "")), bool(payload.get("flag", True)))
                conn.send_reply("ack", command, seq, {"name": payload.get("name"),
                                                      "enabled": bool(payload.get("flag", True))})
            elif command == "list_tools":
                conn.send_reply("ack", command, seq, {"tools": gw.list_tools()})
            elif command == "list_sessions":
                conn.send_reply("ack", command, seq, {"sessions": gw.list_sessions()})
            elif command == "get_snapshot":
                sid = str(payload.get("session_id", ""))
                conn.send_reply("ack", command, seq, {"session_id": sid,
                                                      "snapshot": gw.get_snapshot(sid)})
            elif command == "get_trace":
                sid = str(payload.get("session_id", ""))
                conn.send_reply("ack", command, seq, {"session_id": sid,
                                                      "entries": gw.get_trace(sid)})
        except GatewayError as exc:
            conn.send_reply("error", command, seq, {"error": str(exc)})
        except Exception as exc:  # noqa: BLE001 - protocol errors must not kill the reader
            logger.exception("command %s failed", command)
            conn.send_reply("error", command, seq, {"error": f"internal error: {exc}"})


def serve(config: GatewayConfig | None = None, gateway: Gateway | None = None) -> GatewayServer:
    """Start a gateway server; returns a handle with .port, .url and .stop()."""
    return GatewayServer(config or GatewayConfig(), gateway)
