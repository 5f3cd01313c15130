"""The four comparison agent architectures: one-shot action sequencing (das),
program generation over the ActionScript DSL (cge), a planner+evaluator pair
(dllms), and a planner/actor/evaluator triple (tllms).

All four consume the same tool registry and world handle as the closed-loop
agent; only the orchestration differs.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from typing import Any, Callable

from agentloop.actionscript import (
    GRAMMAR_EBNF,
    ScriptError,
    exec_program,
    parse_action_script,
)
from agentloop.llm import ChatModel, ChatRequest, ModelError, TokenUsage
from agentloop.protocol import (
    FINAL_ACTION,
    AgentMessage,
    Segment,
    extract_json_object,
    parse_agent_message,
    render_history,
    render_system_prompt,
)
from agentloop.session import (
    HistoryEntry,
    LogicalClock,
    SessionConfig,
    SessionResult,
    SystemClock,
    tool_reported_usage,
)
from agentloop.toolset import Observation, ToolRegistry, catalog_block

logger = logging.getLogger(__name__)

VERDICTS = ("proceed", "revise", "replan", "declare_done")

DEFAULT_PLAN_CAP = 5


@dataclass(frozen=True)
class Evaluation:
    verdict: str
    critique: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict in ("revise", "replan") and not self.critique:
            raise ValueError(f"verdict {self.verdict!r} requires a critique")


@dataclass(frozen=True)
class PlanDocument:
    plan_text: str
    stages: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("a plan needs at least one stage")


class _Run:
    """Shared bookkeeping for baseline runners: history, clock, token and
    latency accounting, cancellation, and model access with a parse budget."""

    def __init__(
        self,
        task_text: str,
        registry: ToolRegistry,
        model: ChatModel,
        world: Any,
        config: SessionConfig,
        clock: SystemClock | LogicalClock | None,
        on_entry: Callable[[HistoryEntry], None] | None,
        cancel_event: threading.Event | None,
    ) -> None:
        if not task_text:
            raise ValueError("task_text must be non-empty")
        config.validate()
        self.registry = registry
        self.model = model
        self.world = world
        self.config = config
        self.clock = clock or SystemClock()
        self.on_entry = on_entry
        self.cancel_event = cancel_event
        self.history: list[HistoryEntry] = []
        self.sim_time = 0.0
        self.token_usage = TokenUsage()
        self.model_latency = 0.0
        self._started_at = self.clock.now()
        self.append("user_task", task_text)

    def append(self, kind: str, payload: Any) -> HistoryEntry:
        entry = HistoryEntry(
            kind=kind, payload=payload, timestamp=self.clock.now(), sim_time=self.sim_time
        )
        self.history.append(entry)
        if self.on_entry is not None:
            self.on_entry(entry)
        return entry

    def cancelled(self) -> bool:
        return self.cancel_event is not None and self.cancel_event.is_set()

    def invoke(self, action: str, action_input: dict[str, Any]) -> Observation:
        obs = self.registry.invoke(action, action_input, self.world)
        self.sim_time += obs.sim_elapsed
        self.token_usage = self.token_usage + tool_reported_usage(obs)
        self.append("observation", obs)
        return obs

    def complete(self, segments: list[Segment]) -> str:
        t0 = self.clock.now()
        try:
            text, usage = self.model.complete(
                ChatRequest(
                    segments=segments,
                    temperature=self.config.temperature,
                    max_output_tokens=self.config.max_output_tokens,
                )
            )
        finally:
            self.model_latency += self.clock.now() - t0
        self.token_usage = self.token_usage + usage
        return text

    def result(self, status: str, final_report: str) -> SessionResult:
        return SessionResult(
            status=status,
            final_report=final_report,
            history=list(self.history),
            token_usage=self.token_usage,
            wall_time=self.clock.now() - self._started_at,
            sim_time=self.sim_time,
            model_latency=self.model_latency,
        )

    def transcript(self, system_prompt: str) -> list[Segment]:
        return [Segment("system", system_prompt)] + render_history(self.history)


def _extract_json_array(raw: str) -> str | None:
    """First balanced ``[...]`` region of raw text, string-aware."""
    start = raw.find("[")
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
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                return raw[start : i + 1]
    return None


def _strip_fences(raw: str) -> str:
    """Drop markdown code fences so program sources survive model wrapping."""
    lines = raw.strip().splitlines()
    kept = [line for line in lines if not line.strip().startswith("```")]
    return "\n".join(kept).strip()


def _catalog(registry: ToolRegistry) -> str:
    blocks = [catalog_block(s) for s in registry.specs() if s.enabled]
    return "\n".join(blocks) if blocks else "No tools are available for this task."


# -- DAS: direct action sequencing -------------------------------------------


def _das_system_prompt(registry: ToolRegistry, config: SessionConfig) -> str:
    return (
        "## Output format\n"
        "Reply with exactly one JSON array of action items, each of the form\n"
        '{"action": "<tool name>", "action_input": {<tool parameters>}}.\n'
        "The whole task must be covered by this single sequence: it will be "
        "executed step by step, in order, with no further input from you. "
        'You may end the sequence with {"action": "' + FINAL_ACTION + '", '
        '"action_input": {"report": "..."}} to state the expected outcome.\n\n'
        "## Tools\n" + _catalog(registry) + "\n\n"
        "## Role\n" + config.role_definition
        + (("\n\n## Guidance\n" + config.extra_guidance) if config.extra_guidance else "")
    )


def run_das(
    task_text: str,
    registry: ToolRegistry,
    model: ChatModel,
    world: Any,
    config: SessionConfig,
    clock: SystemClock | LogicalClock | None = None,
    on_entry: Callable[[HistoryEntry], None] | None = None,
    cancel_event: threading.Event | None = None,
) -> SessionResult:
    """One model call producing the full action sequence, executed fully
    open-loop: observations are recorded but never fed back."""
    run = _Run(task_text, registry, model, world, config, clock, on_entry, cancel_event)
    try:
        raw = run.complete(run.transcript(_das_system_prompt(registry, config)))
    except ModelError as exc:
        return run.result("unrecoverable_parse", f"model backend failed: {exc}")

    candidate = _extract_json_array(raw)
    items: Any = None
    if candidate is not None:
        try:
            items = json.loads(candidate)
        except json.JSONDecodeError:
            items = None
    if not isinstance(items, list) or not all(isinstance(i, dict) for i in items):
        return run.result("unrecoverable_parse", "reply did not contain a JSON action array")

    final_report = ""
    executed = 0
    for item in items:
        if run.cancelled():
            return run.result("cancelled", "cancelled by operator")
        action = item.get("action")
        if not isinstance(action, str) or not action:
            run.append(
                "observation",
                Observation(
                    source_tool="sequencer",
                    content=f"Error: sequence item {item!r} has no action name.",
                    is_error=True,
                ),
            )
            continue
        action_input = item.get("action_input")
        if not isinstance(action_input, dict):
            action_input = {}
        msg = AgentMessage(message="", action=action, action_input=action_input)
        run.append("agent_step", msg)
        if action == FINAL_ACTION:
            final_report = str(action_input.get("report") or "sequence executed")
            break
        run.invoke(action, action_input)
        executed += 1

    if not final_report:
        final_report = f"executed {executed} actions"
    run.append("final", final_report)
    return run.result("completed", final_report)


# -- CGE: program generation ---------------------------------------------------


def _cge_system_prompt(registry: ToolRegistry, config: SessionConfig) -> str:
    return (
        "## Output format\n"
        "Reply with exactly one program in the action-script language below, "
        "and nothing else. The program is parsed, checked, and executed once; "
        "call only the listed tools and end with halt(\"<report>\").\n\n"
        "## Grammar\n" + GRAMMAR_EBNF + "\n"
        "## Tools\n" + _catalog(registry) + "\n\n"
        "## Role\n" + config.role_definition
        + (("\n\n## Guidance\n" + config.extra_guidance) if config.extra_guidance else "")
    )


def run_cge(
    task_text: str,
    registry: ToolRegistry,
    model: ChatModel,
    world: Any,
    config: SessionConfig,
    clock: SystemClock | LogicalClock | None = None,
    on_entry: Callable[[HistoryEntry], None] | None = None,
    cancel_event: threading.Event | None = None,
) -> SessionResult:
    """One program-generation call, at most one repair re-prompt on a parse
    failure, then sandboxed execution of the program."""
    run = _Run(task_text, registry, model, world, config, clock, on_entry, cancel_event)
    system = _cge_system_prompt(registry, config)

    script = None
    for attempt in range(2):
        try:
            raw = run.complete(run.transcript(system))
        except ModelError as exc:
            return run.result("unrecoverable_parse", f"model backend failed: {exc}")
        source = _strip_fences(raw)
        try:
            script = parse_action_script(source)
        except ScriptError as err:
            if attempt == 1:
                return run.result("unrecoverable_parse", f"program rejected twice: {err}")
            run.append(
                "observation",
                Observation(
                    source_tool="program_checker",
                    content=f"Your program was rejected: {err}. Reply with a corrected program.",
                    is_error=True,
                ),
            )
            continue
        run.append("agent_step", source)
        break

    assert script is not None
    outcome = exec_program(script, registry, run.world)
    for obs in outcome.trace:
        run.sim_time += obs.sim_elapsed
        run.append("observation", obs)
    run.append("final", outcome.report)
    if outcome.runtime_error:
        return run.result("aborted_by_agent", outcome.report)
    return run.result("completed", outcome.report)


# -- shared persona helpers ------------------------------------------------------


def _parse_evaluation(raw: str) -> Evaluation:
    """Evaluator replies degrade to proceed when malformed; a harness must not
    depend on evaluator discipline."""
    candidate = extract_json_object(raw)
    if candidate is None:
        logger.warning("evaluator reply had no JSON object; treating as proceed")
        return Evaluation("proceed")
    try:
        obj = json.loads(candidate)
    except json.JSONDecodeError:
        logger.warning("evaluator reply was not valid JSON; treating as proceed")
        return Evaluation("proceed")
    verdict = obj.get("verdict") if isinstance(obj, dict) else None
    critique = obj.get("critique") if isinstance(obj, dict) else None
    if verdict not in VERDICTS:
        logger.warning("evaluator verdict %r unknown; treating as proceed", verdict)
        return Evaluation("proceed")
    critique = critique if isinstance(critique, str) else ""
    if verdict in ("revise", "replan") and not critique:
        critique = "(no critique given)"
    return Evaluation(verdict, critique)


def _obtain_agent_message(run: _Run, system: str) -> AgentMessage | SessionResult:
    """LEO-style protocol: call until a parseable AgentMessage arrives, with
    correction hints recorded as observations, bounded by the parse budget."""
    failures = 0
    while True:
        try:
            raw = run.complete(run.transcript(system))
        except ModelError as exc:
            return run.result("unrecoverable_parse", f"model backend failed: {exc}")
        outcome = parse_agent_message(raw)
        if outcome.ok:
            return outcome.message
        failures += 1
        if failures >= run.config.max_parse_retries:
            return run.result(
                "unrecoverable_parse",
                f"unparseable model output after {failures} attempts ({outcome.failure.kind})",
            )
        run.append(
            "observation",
            Observation(
                source_tool="format_checker",
                content=f"Your last reply could not be used ({outcome.failure.kind}). "
                + outcome.failure.hint,
                is_error=True,
            ),
        )


_EVALUATOR_CONTRACT = (
    "## Output format\n"
    "Reply with exactly one JSON object of the form\n"
    '{"verdict": "proceed" | "revise" | "replan" | "declare_done", "critique": "..."}.\n'
    "Use proceed when the last step advanced the task, revise with a critique "
    "when the next step should change course, replan when the whole plan is "
    "broken, and declare_done when the task (or current stage) is complete.\n"
)


# -- DLLMs: planner + evaluator ---------------------------------------------------


def run_dllms(
    task_text: str,
    registry: ToolRegistry,
    model: ChatModel,
    world: Any,
    config: SessionConfig,
    clock: SystemClock | LogicalClock | None = None,
    on_entry: Callable[[HistoryEntry], None] | None = None,
    cancel_event: threading.Event | None = None,
) -> SessionResult:
    """Alternating planner/evaluator turns over a shared history.  The
    evaluator only advises; the planner keeps the authority to finish."""
    run = _Run(task_text, registry, model, world, config, clock, on_entry, cancel_event)
    planner_system = render_system_prompt(
        registry.specs(),
        config.role_definition
        + " You are the planner: plan, reason, and execute actions step by step. "
        "An evaluator reviews each step; weigh its advice but decide yourself.",
        config.extra_guidance,
    )
    evaluator_system = (
        _EVALUATOR_CONTRACT
        + "\n## Role\nYou are the evaluator: judge the planner's latest step and its "
        "observation against the task, then advise."
    )

    for _ in range(config.max_steps):
        if run.cancelled():
            return run.result("cancelled", "cancelled by operator")

        got = _obtain_agent_message(run, planner_system)
        if isinstance(got, SessionResult):
            return got
        run.append("agent_step", got)
        if got.action == FINAL_ACTION:
            report = str(got.action_input.get("report") or got.message or "task completed")
            run.append("final", report)
            return run.result("completed", report)
        if got.action == "abort":
            reason = str(got.action_input.get("reason") or got.message or "aborted")
            run.append("final", reason)
            return run.result("aborted_by_agent", reason)
        run.invoke(got.action, got.action_input)

        try:
            raw = run.complete(run.transcript(evaluator_system))
        except ModelError as exc:
            return run.result("unrecoverable_parse", f"model backend failed: {exc}")
        evaluation = _parse_evaluation(raw)
        content = f"Evaluator verdict: {evaluation.verdict}."
        if evaluation.critique:
            content += " " + evaluation.critique
        run.append("observation", Observation(source_tool="evaluator", content=content))

    return run.result("step_limit", f"step limit ({config.max_steps}) reached")


# -- TLLMs: planner / actor / evaluator --------------------------------------------


def _parse_plan(raw: str) -> PlanDocument | None:
    candidate = extract_json_object(raw)
    if candidate is None:
        return None
    try:
        obj = json.loads(candidate)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    stages = obj.get("stages")
    if not isinstance(stages, list) or not stages:
        return None
    if not all(isinstance(s, str) and s for s in stages):
        return None
    plan_text = obj.get("plan")
    return PlanDocument(
        plan_text=plan_text if isinstance(plan_text, str) else "",
        stages=tuple(stages),
    )


def run_tllms(
    task_text: str,
    registry: ToolRegistry,
    model: ChatModel,
    world: Any,
    config: SessionConfig,
    clock: SystemClock | LogicalClock | None = None,
    on_entry: Callable[[HistoryEntry], None] | None = None,
    cancel_event: threading.Event | None = None,
    plan_cap: int = DEFAULT_PLAN_CAP,
) -> SessionResult:
    """Outer loop: the planner stages the task.  Inner loop per stage: the
    actor makes tool calls and the evaluator judges each observation; replan
    verdicts exit to the outer loop, declare_done advances the stage."""
    run = _Run(task_text, registry, model, world, config, clock, on_entry, cancel_event)

    planner_system = (
        "## Output format\n"
        'Reply with exactly one JSON object {"plan": "<your reasoning>", '
        '"stages": ["<stage 1>", ...]} that divides the task into one or more '
        "stages an actor can execute with the tools below.\n\n"
        "## Tools\n" + _catalog(registry) + "\n\n"
        "## Role\n" + config.role_definition
        + " You are the planner: produce high-level plans, revise them on replan "
        "requests, and confirm completion at the end."
        + (("\n\n## Guidance\n" + config.extra_guidance) if config.extra_guidance else "")
    )
    evaluator_system = (
        _EVALUATOR_CONTRACT
        + "\n## Role\nYou are the evaluator: judge the actor's latest step and its "
        "observation against the current stage; declare_done when the stage is complete."
    )

    actor_steps = 0
    plans_made = 0

    while True:
        if run.cancelled():
            return run.result("cancelled", "cancelled by operator")
        if plans_made >= plan_cap:
            return run.result("step_limit", f"plan cap ({plan_cap}) reached")

        plan: PlanDocument | None = None
        failures = 0
        while plan is None:
            try:
                raw = run.complete(run.transcript(planner_system))
            except ModelError as exc:
                return run.result("unrecoverable_parse", f"model backend failed: {exc}")
            plan = _parse_plan(raw)
            if plan is None:
                failures += 1
                if failures >= config.max_parse_retries:
                    return run.result(
                        "unrecoverable_parse",
                        f"planner produced no usable plan after {failures} attempts",
                    )
                run.append(
                    "observation",
                    Observation(
                        source_tool="format_checker",
                        content='Your plan could not be used. Reply with {"plan": "...", '
                        '"stages": ["..."]} and at least one stage.',
                        is_error=True,
                    ),
                )
        plans_made += 1
        stage_lines = "; ".join(f"{i + 1}) {s}" for i, s in enumerate(plan.stages))
        run.append("agent_step", f"PLAN: {plan.plan_text or '(no reasoning given)'} STAGES: {stage_lines}")

        replan = False
        for stage_index, stage in enumerate(plan.stages):
            stage_done = False
            while not stage_done:
                if run.cancelled():
                    return run.result("cancelled", "cancelled by operator")
                if actor_steps >= config.max_steps:
                    return run.result("step_limit", f"step limit ({config.max_steps}) reached")

                actor_system = render_system_prompt(
                    registry.specs(),
                    config.role_definition
                    + " You are the actor: execute the current stage of the plan with "
                    "single tool calls. Use final_response only when the current stage "
                    "is fully done.",
                    f"Current stage ({stage_index + 1} of {len(plan.stages)}): {stage}",
                )
                got = _obtain_agent_message(run, actor_system)
                if isinstance(got, SessionResult):
                    return got
                run.append("agent_step", got)
                actor_steps += 1
                if got.action == FINAL_ACTION:
                    stage_done = True
                    break
                run.invoke(got.action, got.action_input)

                try:
                    raw = run.complete(run.transcript(evaluator_system))
                except ModelError as exc:
                    return run.result("unrecoverable_parse", f"model backend failed: {exc}")
                evaluation = _parse_evaluation(raw)
                content = f"Evaluator verdict: {evaluation.verdict}."
                if evaluation.critique:
                    content += " " + evaluation.critique
                run.append("observation", Observation(source_tool="evaluator", content=content))
                if evaluation.verdict == "declare_done":
                    stage_done = True
                elif evaluation.verdict == "replan":
                    replan = True
                    break
            if replan:
                break
        if replan:
            continue

        # All stages done: the planner confirms and reports.
        run.append(
            "observation",
            Observation(
                source_tool="orchestrator",
                content="All plan stages are complete. Reply with "
                '{"message": "...", "action": "final_response", '
                '"action_input": {"report": "<final report>"}}.',
            ),
        )
        got = _obtain_agent_message(run, planner_system)
        if isinstance(got, SessionResult):
            return got
        run.append("agent_step", got)
        if got.action == FINAL_ACTION:
            report = str(got.action_input.get("report") or got.message or "all stages completed")
        else:
            report = got.message or "all stages completed"
        run.append("final", report)
        return run.result("completed", report)
