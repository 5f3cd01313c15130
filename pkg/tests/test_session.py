import json
import threading
import time

import pytest

from agentloop.llm import ScriptedModel, TokenUsage
from agentloop.protocol import Segment, render_history, render_system_prompt
from agentloop.session import (
    HistoryEntry,
    LogicalClock,
    Session,
    SessionConfig,
    SessionFinishedError,
    load_trace,
    run_session,
    save_trace,
)
from agentloop.toolset import Observation

from conftest import echo_tool, make_registry, make_world


def step_json(message, action, **action_input):
    return json.dumps({"message": message, "action": action, "action_input": action_input})


FINAL = step_json("done", "final_response", report="found cup")


def make_session(responses, max_steps=40, max_parse_retries=3, world=None, registry=None):
    registry = registry or make_registry(echo_tool("rotate"), echo_tool("detect"))
    model = ScriptedModel(responses)
    config = SessionConfig(role_definition="test robot", max_steps=max_steps,
                           max_parse_retries=max_parse_retries)
    session = Session("find the cup", registry, model, world or make_world(), config,
                      LogicalClock())
    return session, model


def kinds(history):
    return [e.kind for e in history]


def test_scripted_trace_runs_to_completion():
    session, _ = make_session([
        step_json("a", "rotate", yaw_deg=90),
        step_json("b", "detect"),
        FINAL,
    ])
    result = session.run()
    assert result.status == "completed"
    assert result.final_report == "found cup"
    assert sum(1 for e in result.history if e.kind == "agent_step") == 3
    assert kinds(result.history) == [
        "user_task", "agent_step", "observation", "agent_step", "observation",
        "agent_step", "final",
    ]


def test_first_entry_is_always_user_task():
    session, _ = make_session([FINAL])
    assert session.history[0].kind == "user_task"
    assert session.history[0].payload == "find the cup"


def test_consecutive_parse_failures_exhaust_budget():
    session, model = make_session(["garbage", "more garbage", "worst garbage"],
                                  max_parse_retries=3)
    result = session.run()
    assert result.status == "unrecoverable_parse"
    assert len(model.call_log) == 3
    # Two hints were recorded before the third failure ended it.
    hints = [e for e in result.history if e.kind == "observation"]
    assert len(hints) == 2
    assert all(e.payload.source_tool == "format_checker" for e in hints)


def test_single_parse_failure_recovers_with_hint_in_next_prompt():
    session, model = make_session(["not json at all", step_json("ok", "detect"), FINAL],
                                  max_parse_retries=3)
    result = session.run()
    assert result.status == "completed"
    # The second request carries the correction hint as an observation segment.
    second_request = model.request_log[1]
    observation_texts = [s.text for s in second_request.segments if s.role == "observation"]
    assert any("could not be used" in t for t in observation_texts)
    # One budget unit consumed, then reset after the valid reply.
    assert result.history[1].kind == "observation"  # the hint
    assert result.history[2].kind == "agent_step"


def test_step_limit_cuts_off_long_scripts():
    steps = [step_json(f"s{i}", "rotate") for i in range(5)]
    session, _ = make_session(steps, max_steps=2)
    result = session.run()
    assert result.status == "step_limit"
    assert sum(1 for e in result.history if e.kind == "agent_step") == 2


def test_step_appends_exactly_step_and_observation():
    session, _ = make_session([step_json("a", "rotate"), FINAL])
    before = len(session.history)
    session.step()
    assert len(session.history) == before + 2
    assert session.history[-2].kind == "agent_step"
    assert session.history[-1].kind == "observation"


def test_final_response_invokes_no_tool():
    calls = []

    def handler(inp, world):
        calls.append(inp)
        return Observation(source_tool="t", content="ok")

    from agentloop.toolset import ToolSpec
    registry = make_registry(ToolSpec(name="t", description="d", handler=handler))
    session, _ = make_session([FINAL], registry=registry)
    result = session.run()
    assert result.status == "completed"
    assert calls == []


def test_abort_action_maps_to_aborted_by_agent():
    session, _ = make_session([step_json("stuck", "abort", reason="wall in the way")])
    result = session.run()
    assert result.status == "aborted_by_agent"
    assert result.final_report == "wall in the way"


def test_unknown_tool_is_error_observation_not_crash():
    session, _ = make_session([step_json("a", "teleport"), FINAL])
    result = session.run()
    assert result.status == "completed"
    errors = [e for e in result.history
              if e.kind == "observation" and e.payload.is_error]
    assert len(errors) == 1


def test_script_exhaustion_is_terminal_not_raised():
    session, _ = make_session([step_json("a", "rotate")])  # loop wants more
    result = session.run()
    assert result.status == "unrecoverable_parse"
    assert "backend failed" in result.final_report


# -- interjections ------------------------------------------------------------


def test_interjection_lands_before_next_step():
    session, _ = make_session([step_json("a", "rotate"), step_json("b", "detect"), FINAL])
    session.step()  # step 1 complete
    session.interject("skip the red bottle")
    session.step()  # step 2 begins after the enqueue
    entries = session.history
    interjection_at = next(i for i, e in enumerate(entries) if e.kind == "interjection")
    step2_at = [i for i, e in enumerate(entries) if e.kind == "agent_step"][1]
    assert interjection_at < step2_at
    assert entries[interjection_at].payload == "skip the red bottle"


def test_interjection_into_finished_session_errors():
    session, _ = make_session([FINAL])
    session.run()
    with pytest.raises(SessionFinishedError):
        session.interject("too late")


def test_interjection_appears_in_next_prompt():
    session, model = make_session([step_json("a", "rotate"), FINAL])
    session.step()
    session.interject("hurry up")
    session.step()
    last_request = model.request_log[-1]
    user_texts = [s.text for s in last_request.segments if s.role == "user"]
    assert "hurry up" in user_texts


# -- cancel ----------------------------------------------------------------------


def test_cancel_before_first_step():
    session, _ = make_session([FINAL])
    result = session.cancel()
    assert result.status == "cancelled"
    assert kinds(result.history) == ["user_task"]


def test_cancel_twice_raises():
    session, _ = make_session([FINAL])
    session.cancel()
    with pytest.raises(SessionFinishedError):
        session.cancel()


def test_cancel_mid_run_preserves_history():
    responses = [step_json(f"s{i}", "rotate") for i in range(30)]
    session, _ = make_session(responses)
    started = threading.Event()

    gate = threading.Event()

    def slow_entry(entry):
        started.set()
        if entry.kind == "observation":
            gate.wait(1.0)

    session.on_entry = slow_entry
    thread = threading.Thread(target=session.run)
    thread.start()
    started.wait(2.0)
    session.request_cancel()
    gate.set()
    thread.join(5.0)
    assert not thread.is_alive()
    result = session.result()
    assert result.status == "cancelled"
    # History intact up to the last completed step: pairs plus the task.
    assert result.history[0].kind == "user_task"
    steps = sum(1 for e in result.history if e.kind == "agent_step")
    observations = sum(1 for e in result.history if e.kind == "observation")
    assert steps == observations


def test_run_after_cancel_returns_cancelled_result():
    session, _ = make_session([FINAL])
    session.cancel()
    result = session.run()
    assert result.status == "cancelled"


# -- accounting and determinism -----------------------------------------------------


def test_token_usage_equals_sum_of_call_log():
    session, model = make_session([
        "garbage",  # one failed parse also consumes tokens
        step_json("a", "rotate"),
        step_json("b", "detect"),
        FINAL,
    ])
    result = session.run()
    expected = TokenUsage()
    for usage in model.call_log:
        expected = expected + usage
    assert result.token_usage == expected
    assert len(model.call_log) == 4


def test_aux_tool_model_spend_is_counted():
    # A tool that calls the model (summarize) reports its spend through the
    # observation; the session total still equals the whole call log.
    from agentloop.llm import builtin_script_path
    from agentloop.simworld import load_scenario
    from agentloop.tasks import builtin_tasks, registry_for_task

    task = builtin_tasks()["handover"]
    world = load_scenario(task.scenario_path)
    model = ScriptedModel.from_path(builtin_script_path("handover_leo"))
    registry = registry_for_task(task, model, world.robot_kind)
    result = Session(task.task_prompt, registry, model, world,
                     task.session_config("leo"), LogicalClock()).run()
    assert result.status == "completed"
    assert len(model.call_log) == 10  # 9 agent calls + 1 summarize call
    total = TokenUsage()
    for usage in model.call_log:
        total = total + usage
    assert result.token_usage == total


def test_history_growth_bound():
    session, _ = make_session(
        [step_json(f"s{i}", "rotate") for i in range(3)] + [FINAL]
    )
    session.interject("note")  # queued before the first step
    result = session.run()
    interjections = sum(1 for e in result.history if e.kind == "interjection")
    assert len(result.history) <= 2 * 4 + interjections + 2


def test_prompts_are_reproducible_from_history():
    # Replaying the history through render prefixes must reproduce every
    # prompt the model saw, byte for byte.
    responses = [step_json("a", "rotate"), step_json("b", "detect"), FINAL]
    registry = make_registry(echo_tool("rotate"), echo_tool("detect"))
    model = ScriptedModel(responses)
    config = SessionConfig(role_definition="test robot")
    session = Session("find the cup", registry, model, make_world(), config, LogicalClock())
    result = session.run()

    system = render_system_prompt(registry.specs(), config.role_definition, config.extra_guidance)
    # Each request i was built from the history prefix ending just before the
    # i-th agent step (entries are appended in prompt order).
    entries = result.history
    boundaries = [i for i, e in enumerate(entries) if e.kind == "agent_step"]
    for request, boundary in zip(model.request_log, boundaries):
        expected = [Segment("system", system)] + render_history(entries[:boundary])
        assert request.segments == expected


def test_identical_scripted_sessions_produce_identical_traces(tmp_path):
    def run_once(path):
        session, _ = make_session([step_json("a", "rotate"), FINAL])
        result = session.run()
        save_trace(result.history, path)
        return path.read_bytes()

    assert run_once(tmp_path / "a.jsonl") == run_once(tmp_path / "b.jsonl")


# -- trace persistence ----------------------------------------------------------------


def test_trace_round_trip(tmp_path):
    session, _ = make_session(["garbage", step_json("a", "rotate"), FINAL])
    result = session.run()
    path = tmp_path / "trace.jsonl"
    save_trace(result.history, path)
    loaded = load_trace(path)
    assert [e.to_dict() for e in loaded] == [e.to_dict() for e in result.history]
    # Payload types survive the round trip.
    assert any(e.kind == "agent_step" and e.payload.action == "rotate" for e in loaded)
    assert any(e.kind == "observation" and isinstance(e.payload, Observation) for e in loaded)


def test_run_session_helper():
    registry = make_registry(echo_tool("rotate"))
    result = run_session(
        "task",
        registry,
        ScriptedModel([FINAL]),
        make_world(),
        SessionConfig(role_definition="r"),
        LogicalClock(),
    )
    assert result.status == "completed"


def test_config_validation():
    with pytest.raises(ValueError):
        SessionConfig(role_definition="r", max_steps=0).validate()
    with pytest.raises(ValueError):
        SessionConfig(role_definition="r", max_parse_retries=0).validate()
    with pytest.raises(ValueError):
        SessionConfig(role_definition="").validate()
