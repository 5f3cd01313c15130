import json
import threading
import time
import urllib.request

import pytest
from websockets.sync.client import connect

from agentloop.gateway import Gateway, GatewayConfig, _ClientConn, serve
from agentloop.llm import builtin_script_path
from agentloop.protocol import parse_agent_message
from agentloop.tasks import builtin_tasks

DELIVERY_MODEL = f"scripted:{builtin_script_path('delivery_leo')}"


class Client:
    """Headless operator client for driving the gateway in tests."""

    def __init__(self, url):
        self.ws = connect(url)
        self.seq = 0
        self.events = []

    def close(self):
        self.ws.close()

    def _recv(self, timeout=5.0):
        frame = json.loads(self.ws.recv(timeout=timeout))
        if frame["kind"] == "event":
            self.events.append(frame)
        return frame

    def send_raw(self, text):
        self.ws.send(text)

    def command(self, command_type, timeout=5.0, **payload):
        self.seq += 1
        sent_seq = self.seq
        self.ws.send(json.dumps(
            {"kind": "command", "type": command_type, "seq": sent_seq, "payload": payload}
        ))
        deadline = time.monotonic() + timeout
        while True:
            frame = self._recv(timeout=max(0.05, deadline - time.monotonic()))
            if frame["kind"] in ("ack", "error"):
                assert frame["seq"] == sent_seq, f"reply seq mismatch: {frame}"
                assert frame["type"] == command_type
                return frame

    def wait_event(self, event_type, predicate=None, timeout=5.0):
        for event in self.events:
            if event["type"] == event_type and (predicate is None or predicate(event)):
                return event
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            frame = self._recv(timeout=max(0.05, deadline - time.monotonic()))
            if (
                frame["kind"] == "event"
                and frame["type"] == event_type
                and (predicate is None or predicate(frame))
            ):
                return frame
        raise AssertionError(f"no {event_type} event within {timeout}s")

    def session_events(self, session_id):
        return [e for e in self.events if e.get("session_id") == session_id]


@pytest.fixture
def server():
    handle = serve(GatewayConfig(snapshot_hz=10000.0))
    yield handle
    handle.stop()


@pytest.fixture
def client(server):
    c = Client(server.url)
    yield c
    c.close()


def _run_delivery(client):
    ack = client.command("start_task", task_id="delivery", agent_kind="leo",
                         model=DELIVERY_MODEL)
    assert ack["kind"] == "ack"
    sid = ack["payload"]["session_id"]
    client.wait_event("session_ended", lambda e: e["session_id"] == sid, timeout=10)
    return sid


def test_start_task_streams_events_in_trace_order(client):
    sid = _run_delivery(client)
    events = client.session_events(sid)
    types = [e["type"] for e in events if e["type"] != "world_snapshot"]
    assert types[0] == "session_started"
    assert types[-1] == "session_ended"
    # 14 steps and 13 observations, strictly alternating between them.
    inner = types[1:-1]
    assert inner[0] == "agent_step"
    assert inner.count("agent_step") == 14
    assert inner.count("observation") == 13
    ended = events[-1]
    assert ended["payload"]["status"] == "completed"
    assert "origin" in ended["payload"]["final_report"]
    # Event seq strictly increases on this connection.
    seqs = [e["seq"] for e in client.events]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)


def test_agent_step_events_embed_reparseable_messages(client):
    sid = _run_delivery(client)
    steps = [e for e in client.session_events(sid) if e["type"] == "agent_step"]
    assert steps
    for event in steps:
        outcome = parse_agent_message(event["payload"]["agent_message"])
        assert outcome.ok
        assert list(json.loads(event["payload"]["agent_message"]).keys()) == [
            "message", "action", "action_input",
        ]


def test_every_command_gets_exactly_one_matching_reply(client):
    sid = _run_delivery(client)
    replies = [
        client.command("list_tools"),
        client.command("list_sessions"),
        client.command("get_snapshot", session_id=sid),
        client.command("get_trace", session_id=sid),
        client.command("set_tool_enabled", name="detect", flag=False),
        client.command("set_tool_enabled", name="detect", flag=True),
    ]
    assert all(r["kind"] == "ack" for r in replies)
    # Replies already asserted seq-matched inside command(); check uniqueness:
    # one reply per command seq, none duplicated.
    assert client.seq == 7  # start_task + the six above


def test_interject_reaches_running_session(tmp_path, monkeypatch):
    # A long, paced scripted session (the model sleeps like a real endpoint)
    # so the interjection lands mid-run rather than after completion.
    import dataclasses

    import agentloop.gateway as gateway_mod

    steps = [json.dumps({"message": f"s{i}", "action": "rotate_to",
                         "action_input": {"yaw_deg": (i * 37) % 360}}) for i in range(3000)]
    script = tmp_path / "long.json"
    script.write_text(json.dumps(steps))
    tasks = builtin_tasks()
    slow = tasks["room_search"]
    slow.limits = dataclasses.replace(slow.limits, max_steps=3000)

    class PacedModel:
        def __init__(self, inner):
            self.inner = inner
            self.call_log = inner.call_log

        def complete(self, request):
            time.sleep(0.01)
            return self.inner.complete(request)

    real_from_spec = gateway_mod.model_from_spec
    monkeypatch.setattr(gateway_mod, "model_from_spec",
                        lambda spec: PacedModel(real_from_spec(spec)))
    server = serve(GatewayConfig(snapshot_hz=10000.0), Gateway(tasks=tasks))

    client = Client(server.url)
    try:
        ack = client.command("start_task", task_id="room_search", agent_kind="leo",
                             model=f"scripted:{script}")
        sid = ack["payload"]["session_id"]
        client.wait_event("session_started", lambda e: e["session_id"] == sid)
        reply = client.command("interject", session_id=sid, text="check the corner")
        assert reply["kind"] == "ack"
        applied = client.wait_event(
            "interjection_applied",
            lambda e: e["session_id"] == sid and e["payload"]["text"] == "check the corner",
            timeout=5,
        )
        assert applied["payload"]["text"] == "check the corner"
        cancel = client.command("cancel", session_id=sid)
        assert cancel["kind"] == "ack"
        ended = client.wait_event("session_ended", lambda e: e["session_id"] == sid, timeout=10)
        assert ended["payload"]["status"] == "cancelled"
        # The interjection sits at a step boundary in the recorded trace.
        entries = client.command("get_trace", session_id=sid)["payload"]["entries"]
        at = next(i for i, e in enumerate(entries) if e["kind"] == "interjection")
        assert entries[at - 1]["kind"] in ("observation", "user_task")
        assert entries[at + 1]["kind"] == "agent_step"
    finally:
        client.close()
        server.stop()


def test_interject_finished_session_errors(client):
    sid = _run_delivery(client)
    reply = client.command("interject", session_id=sid, text="too late")
    assert reply["kind"] == "error"
    assert "finish" in reply["payload"]["error"]


def test_cancel_finished_session_errors(client):
    sid = _run_delivery(client)
    reply = client.command("cancel", session_id=sid)
    assert reply["kind"] == "error"


def test_interject_baseline_session_rejected(client):
    ack = client.command("start_task", task_id="delivery", agent_kind="das",
                         model=f"scripted:{builtin_script_path('delivery_das')}")
    sid = ack["payload"]["session_id"]
    client.wait_event("session_ended", lambda e: e["session_id"] == sid, timeout=10)
    reply = client.command("interject", session_id=sid, text="x")
    assert reply["kind"] == "error"


def test_unknown_session_and_command_errors(client):
    assert client.command("get_snapshot", session_id="s999")["kind"] == "error"
    assert client.command("warp_reality")["kind"] == "error"


def test_unknown_task_and_bad_model_errors(client):
    reply = client.command("start_task", task_id="moon_landing", agent_kind="leo",
                           model=DELIVERY_MODEL)
    assert reply["kind"] == "error"
    reply = client.command("start_task", task_id="delivery", agent_kind="leo",
                           model="scripted:/no/such/file.json")
    assert reply["kind"] == "error"


def test_malformed_frames_keep_connection_open(client):
    client.send_raw("this is not json")
    frame = client._recv()
    assert frame["kind"] == "error"
    client.send_raw(json.dumps({"kind": "event", "type": "spoof", "seq": 1}))
    frame = client._recv()
    assert frame["kind"] == "error"
    # Still alive:
    assert client.command("list_tools")["kind"] == "ack"


def test_set_tool_enabled_read_your_writes_and_event(client):
    client.command("set_tool_enabled", name="detect", flag=False)
    tools = client.command("list_tools")["payload"]["tools"]
    detect = next(t for t in tools if t["name"] == "detect")
    assert detect["enabled"] is False
    client.wait_event("tool_config_changed",
                      lambda e: e["payload"] == {"name": "detect", "enabled": False})
    client.command("set_tool_enabled", name="detect", flag=True)


def test_set_tool_enabled_unknown_tool(client):
    assert client.command("set_tool_enabled", name="fly", flag=False)["kind"] == "error"


def test_disabled_tool_applies_to_new_sessions(client):
    client.command("set_tool_enabled", name="grasp", flag=False)
    sid = _run_delivery(client)
    trace = client.command("get_trace", session_id=sid)["payload"]["entries"]
    grasp_errors = [
        e for e in trace
        if e["kind"] == "observation"
        and e["payload"]["source_tool"] == "grasp"
        and e["payload"]["is_error"]
    ]
    assert grasp_errors  # every grasp came back as a disabled-tool error
    client.command("set_tool_enabled", name="grasp", flag=True)


def test_list_sessions_and_snapshot(client):
    sid = _run_delivery(client)
    sessions = client.command("list_sessions")["payload"]["sessions"]
    assert any(s["session_id"] == sid and s["task_id"] == "delivery" for s in sessions)
    snapshot = client.command("get_snapshot", session_id=sid)["payload"]["snapshot"]
    assert snapshot["robot"]["kind"] == "wheeled_arm"
    assert len(snapshot["entities"]) == 10


def test_get_trace_matches_event_stream(client):
    sid = _run_delivery(client)
    entries = client.command("get_trace", session_id=sid)["payload"]["entries"]
    kinds = [e["kind"] for e in entries]
    assert kinds[0] == "user_task"
    assert kinds.count("agent_step") == 14
    assert kinds.count("observation") == 13
    assert kinds[-1] == "final"
    # The event stream carried exactly the step/observation entries.
    events = client.session_events(sid)
    assert sum(1 for e in events if e["type"] == "agent_step") == 14


def test_events_carry_token_accounting(client):
    sid = _run_delivery(client)
    steps = [e for e in client.session_events(sid) if e["type"] == "agent_step"]
    totals = [e["payload"]["token_total"] for e in steps]
    assert all(isinstance(t, int) and t > 0 for t in totals)
    assert totals == sorted(totals)  # spend only grows
    ended = next(e for e in client.session_events(sid) if e["type"] == "session_ended")
    usage = ended["payload"]["token_usage"]
    assert usage["total"] == usage["prompt_tokens"] + usage["completion_tokens"]
    assert usage["total"] == totals[-1]


def test_world_snapshots_flow_when_unthrottled(client):
    sid = _run_delivery(client)
    snaps = [e for e in client.session_events(sid) if e["type"] == "world_snapshot"]
    assert snaps  # snapshot_hz is huge in this fixture, so some must arrive
    assert all("snapshot" in e["payload"] for e in snaps)


def test_snapshot_throttle_limits_rate(tmp_path):
    handle = serve(GatewayConfig(snapshot_hz=1.0))
    try:
        client = Client(handle.url)
        try:
            sid = _run_delivery(client)
            snaps = [e for e in client.session_events(sid) if e["type"] == "world_snapshot"]
            # The whole scripted run takes well under a second: the 1 Hz
            # throttle admits only the forced initial snapshot.
            assert len(snaps) <= 2
        finally:
            client.close()
    finally:
        handle.stop()


# -- backpressure: slow client -----------------------------------------------------


class _GatedSocket:
    """Fake transport whose send() blocks until released, like a stalled TCP
    peer; records everything sent after release."""

    def __init__(self):
        self.gate = threading.Event()
        self.sent = []

    def send(self, text):
        self.gate.wait()
        self.sent.append(json.loads(text))


def test_slow_client_drops_only_world_snapshots():
    socket = _GatedSocket()
    conn = _ClientConn(socket, max_queue=8)
    # First frame occupies the writer (blocked in send); the rest pile up.
    conn.send_event("session_started", "s1", {"n": -1})
    time.sleep(0.05)
    for i in range(50):
        conn.send_event("agent_step", "s1", {"n": i})
        conn.send_event("world_snapshot", "s1", {"n": i})
        conn.send_event("observation", "s1", {"n": i})
    conn.send_event("session_ended", "s1", {"status": "completed"})
    socket.gate.set()
    deadline = time.monotonic() + 5
    while time.monotonic() < deadline and not any(
        f["type"] == "snapshots_dropped" for f in socket.sent
    ):
        time.sleep(0.01)
    conn.close()

    types = [f["type"] for f in socket.sent]
    # Every critical frame arrived, in order.
    assert types.count("agent_step") == 50
    assert types.count("observation") == 50
    assert types.count("session_ended") == 1
    steps = [f["payload"]["n"] for f in socket.sent if f["type"] == "agent_step"]
    assert steps == list(range(50))
    # Snapshots were dropped (queue limit 8 against 151 critical frames), and
    # the drop was reported.
    assert types.count("world_snapshot") < 50
    notices = [f for f in socket.sent if f["type"] == "snapshots_dropped"]
    assert notices
    dropped = sum(f["payload"]["dropped"] for f in notices)
    assert dropped + types.count("world_snapshot") == 50
    # Seq still strictly increasing despite the drops.
    seqs = [f["seq"] for f in socket.sent]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)


def test_slow_reader_still_gets_all_critical_frames(server):
    client = Client(server.url)
    try:
        ack = client.command("start_task", task_id="delivery", agent_kind="leo",
                             model=DELIVERY_MODEL)
        sid = ack["payload"]["session_id"]
        # Read deliberately slowly; the session finishes long before we drain.
        deadline = time.monotonic() + 20
        while time.monotonic() < deadline and not any(
            e["type"] == "session_ended" for e in client.session_events(sid)
        ):
            client._recv(timeout=5)
            time.sleep(0.002)
        types = [e["type"] for e in client.session_events(sid)]
        assert types.count("agent_step") == 14
        assert types.count("observation") == 13
        assert types[-1] == "session_ended"
    finally:
        client.close()


# -- static file serving -------------------------------------------------------------


def test_static_files_served_at_root(tmp_path):
    (tmp_path / "index.html").write_text("<html><body>console</body></html>")
    (tmp_path / "app.js").write_text("export const x = 1;")
    handle = serve(GatewayConfig(static_dir=tmp_path))
    try:
        base = f"http://127.0.0.1:{handle.port}"
        with urllib.request.urlopen(f"{base}/") as resp:
            assert resp.status == 200
            assert b"console" in resp.read()
            assert "text/html" in resp.headers["Content-Type"]
        with urllib.request.urlopen(f"{base}/app.js") as resp:
            assert "javascript" in resp.headers["Content-Type"]
        with pytest.raises(urllib.error.HTTPError):
            urllib.request.urlopen(f"{base}/missing.js")
        with pytest.raises(urllib.error.HTTPError):
            urllib.request.urlopen(f"{base}/../etc/passwd")
    finally:
        handle.stop()


def test_root_without_static_dir_reports_gateway(server):
    with urllib.request.urlopen(f"http://127.0.0.1:{server.port}/") as resp:
        assert resp.status == 200
        assert b"gateway" in resp.read()
