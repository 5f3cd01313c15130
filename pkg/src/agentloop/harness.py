"""Experiment harness: scoring against rubrics, trace replay, repeated runs,
aggregation, report emission, and coverage export."""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from agentloop import baselines
from agentloop.llm import ChatModel, ScriptedModel, TokenUsage
from agentloop.session import (
    HistoryEntry,
    LogicalClock,
    Session,
    SessionResult,
    SystemClock,
    save_trace,
)
from agentloop.simworld import (
    CoverageGrid,
    FovParams,
    Pose,
    World,
    load_scenario,
    update_coverage,
)
from agentloop.tasks import Rubric, TaskSpec, registry_for_task, resolve_predicate
from agentloop.toolset import Observation, ToolRegistry

AGENT_KINDS = ("leo", "das", "cge", "dllms", "tllms")

UNDEFINED_TIME = "--"  # success-time marker when no run succeeded


# -- scoring ---------------------------------------------------------------------


def score_run(
    rubric: Rubric,
    initial_world: World,
    trace: list[HistoryEntry],
    final_world: World,
) -> tuple[float, dict[str, bool]]:
    """Sum the points of satisfied milestones; the breakdown maps each
    milestone name to its boolean."""
    score = 0.0
    breakdown: dict[str, bool] = {}
    for milestone in rubric.milestones:
        passed = bool(resolve_predicate(milestone.predicate_id)(initial_world, trace, final_world))
        breakdown[milestone.name] = passed
        if passed:
            score += milestone.points
    return score, breakdown


def nearest_target(world: World, class_label: str, from_xy: tuple[float, float]) -> str:
    """Entity id of the class member with minimal horizontal distance from
    from_xy; ties broken by lexicographically smallest id."""
    candidates = world.entities_of_class(class_label)
    if not candidates:
        raise ValueError(f"no entity of class {class_label!r} in the scene")
    return min(
        candidates,
        key=lambda e: (math.hypot(e.position[0] - from_xy[0], e.position[1] - from_xy[1]), e.id),
    ).id


def score_room_search(trace: list[HistoryEntry]) -> int:
    """Distinct entity ids appearing in any detect observation across the trace."""
    ids: set[str] = set()
    for entry in trace:
        if entry.kind != "observation" or not isinstance(entry.payload, Observation):
            continue
        obs = entry.payload
        if obs.source_tool == "detect" and obs.data:
            for hit in obs.data.get("detections", []):
                if isinstance(hit, dict) and "id" in hit:
                    ids.add(hit["id"])
    return len(ids)


def replay_world(scenario_path: str | Path, trace: list[HistoryEntry]) -> World:
    """Rebuild the final world by replaying the trace's world-mutating
    observations over a fresh scenario load.  Architecture-independent: it
    reads observation data, not agent steps."""
    world = load_scenario(scenario_path)
    for entry in trace:
        if entry.kind != "observation" or not isinstance(entry.payload, Observation):
            continue
        obs = entry.payload
        if obs.is_error or not obs.data:
            continue
        if obs.source_tool == "move_to":
            p = obs.data.get("position")
            if isinstance(p, list) and len(p) == 3:
                world.move_to(p[0], p[1], p[2] if world.robot_kind == "uav" else None)
        elif obs.source_tool == "rotate_to":
            yaw = obs.data.get("yaw_deg")
            if isinstance(yaw, (int, float)):
                world.rotate_to(float(yaw))
        elif obs.source_tool == "grasp":
            held = obs.data.get("held")
            if isinstance(held, str):
                world.grasp(held)
        elif obs.source_tool == "release":
            world.release()
    return world


# -- run records and aggregation ----------------------------------------------------


@dataclass
class RunRecord:
    task_id: str
    agent_kind: str
    variant: str
    rep: int
    score: float
    max_points: int
    prompt_tokens: int
    completion_tokens: int
    wall_time: float
    sim_time: float
    model_latency: float
    success: bool
    status: str
    trace_file: str = ""

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @property
    def time_s(self) -> float:
        """The reported "Time (s)": simulated action time plus measured model
        latency (the two are tracked separately end to end)."""
        return self.sim_time + self.model_latency

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "agent_kind": self.agent_kind,
            "variant": self.variant,
            "rep": self.rep,
            "score": self.score,
            "max_points": self.max_points,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "wall_time": self.wall_time,
            "sim_time": self.sim_time,
            "model_latency": self.model_latency,
            "success": self.success,
            "status": self.status,
            "trace_file": self.trace_file,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunRecord:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class AggregateRow:
    task_id: str
    agent_kind: str
    variant: str
    runs: int
    mean_score: float
    max_points: int
    mean_tokens: float
    mean_time: float
    mean_success_time: float | None  # None when zero runs succeeded
    perfect_rate: float              # percent


def aggregate(records: Iterable[RunRecord]) -> list[AggregateRow]:
    """Group by (task, agent, variant) and average; success time averages only
    over runs that achieved the full score."""
    groups: dict[tuple[str, str, str], list[RunRecord]] = {}
    for record in records:
        groups.setdefault((record.task_id, record.agent_kind, record.variant), []).append(record)
    rows = []
    for (task_id, agent_kind, variant), group in sorted(groups.items()):
        n = len(group)
        successes = [r for r in group if r.success]
        rows.append(
            AggregateRow(
                task_id=task_id,
                agent_kind=agent_kind,
                variant=variant,
                runs=n,
                mean_score=sum(r.score for r in group) / n,
                max_points=group[0].max_points,
                mean_tokens=sum(r.total_tokens for r in group) / n,
                mean_time=sum(r.time_s for r in group) / n,
                mean_success_time=(
                    sum(r.time_s for r in successes) / len(successes) if successes else None
                ),
                perfect_rate=100.0 * len(successes) / n,
            )
        )
    return rows


# -- experiment running ----------------------------------------------------------


def run_agent(
    agent_kind: str,
    task_text: str,
    registry: ToolRegistry,
    model: ChatModel,
    world: World,
    config,
    clock=None,
    on_entry=None,
    cancel_event: threading.Event | None = None,
    session_sink: Callable[[Session], None] | None = None,
) -> SessionResult:
    """Dispatch one run to the chosen architecture."""
    if agent_kind == "leo":
        session = Session(task_text, registry, model, world, config, clock, on_entry)
        if session_sink is not None:
            session_sink(session)
        if cancel_event is not None and cancel_event.is_set():
            return session.cancel()
        return session.run()
    runner = {
        "das": baselines.run_das,
        "cge": baselines.run_cge,
        "dllms": baselines.run_dllms,
        "tllms": baselines.run_tllms,
    }.get(agent_kind)
    if runner is None:
        raise ValueError(f"unknown agent kind {agent_kind!r}")
    return runner(task_text, registry, model, world, config, clock, on_entry, cancel_event)


def run_experiment(
    task: TaskSpec,
    agent_kind: str,
    repetitions: int,
    model_factory: Callable[[], ChatModel],
    out_dir: str | Path | None = None,
    deterministic_clock: bool | None = None,
) -> tuple[list[RunRecord], AggregateRow]:
    """Run the task `repetitions` times with fresh worlds, models, and
    sessions; score every run (failures included, never dropped); persist
    records and traces as JSON-lines when out_dir is given."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    initial_world = load_scenario(task.scenario_path)  # fail fast before any run

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    records = []
    for rep in range(repetitions):
        world = load_scenario(task.scenario_path)
        model = model_factory()
        scripted = isinstance(model, ScriptedModel)
        use_logical = deterministic_clock if deterministic_clock is not None else scripted
        clock = LogicalClock() if use_logical else SystemClock()
        registry = registry_for_task(task, model, world.robot_kind)
        config = task.session_config(agent_kind)

        result = run_agent(agent_kind, task.task_prompt, registry, model, world, config, clock)

        score, _breakdown = score_run(task.rubric, initial_world, result.history, world)
        trace_file = ""
        if out_path is not None:
            trace_file = f"trace_{task.id}_{agent_kind}_{task.prompt_variant}_{rep}.jsonl"
            save_trace(result.history, out_path / trace_file)
            if agent_kind == "cge":
                source = _cge_program_source(result.history)
                if source is not None:
                    (out_path / trace_file.replace(".jsonl", ".acts")).write_text(
                        source, encoding="utf-8"
                    )
        records.append(
            RunRecord(
                task_id=task.id,
                agent_kind=agent_kind,
                variant=task.prompt_variant,
                rep=rep,
                score=score,
                max_points=task.rubric.max_points,
                prompt_tokens=result.token_usage.prompt_tokens,
                completion_tokens=result.token_usage.completion_tokens,
                wall_time=result.wall_time,
                sim_time=result.sim_time,
                model_latency=result.model_latency,
                success=score >= task.rubric.max_points,
                status=result.status,
                trace_file=trace_file,
            )
        )

    if out_path is not None:
        with open(out_path / "records.jsonl", "a", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict()) + "\n")

    return records, aggregate(records)[0]


def _cge_program_source(trace: list[HistoryEntry]) -> str | None:
    """The accepted program text of a cge run (its sole string agent step)."""
    for entry in trace:
        if entry.kind == "agent_step" and isinstance(entry.payload, str):
            return entry.payload if entry.payload.endswith("\n") else entry.payload + "\n"
    return None


def load_records(path: str | Path) -> list[RunRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_dict(json.loads(line)))
    return records


# -- report emission ----------------------------------------------------------------


def _fmt(value: float, digits: int = 2) -> str:
    return f"{value:.{digits}f}"


def _score_header(rows: list[AggregateRow]) -> str:
    maxima = {row.max_points for row in rows}
    if len(maxima) == 1:
        return f"Score ({maxima.pop()})"
    return "Score"


REPORT_FOOTER = (
    "Time (s) = simulated action time + measured model latency; "
    "Success Time (s) averages Time (s) over runs that achieved the full score."
)


def emit_report(rows: list[AggregateRow], fmt: str, path: str | Path) -> Path:
    """Architecture-comparison report: one row per (task, agent), columns
    Task, Agent, Score, Token Usage, Time (s), Success Time (s),
    Perfect Rate (%).  Success time shows "--" when no run succeeded."""
    path = Path(path)
    header = [
        "Task",
        "Agent",
        _score_header(rows),
        "Token Usage",
        "Time (s)",
        "Success Time (s)",
        "Perfect Rate (%)",
    ]
    table = [
        [
            row.task_id,
            row.agent_kind,
            _fmt(row.mean_score, 3),
            _fmt(row.mean_tokens, 0),
            _fmt(row.mean_time),
            _fmt(row.mean_success_time) if row.mean_success_time is not None else UNDEFINED_TIME,
            _fmt(row.perfect_rate, 2),
        ]
        for row in rows
    ]
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(header) + " |",
            "| " + " | ".join("---" for _ in header) + " |",
        ]
        lines += ["| " + " | ".join(row) + " |" for row in table]
        lines += ["", REPORT_FOOTER, ""]
        path.write_text("\n".join(lines), encoding="utf-8")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(table)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


PROMPT_REPORT_VARIANT_LABELS = {
    "zero_shot": "zero-shot",
    "one_shot": "one-shot",
    "cot": "CoT",
    "one_shot_cot": "one-shot+CoT",
}


def emit_prompt_report(
    records: list[RunRecord],
    fmt: str,
    path: str | Path,
    room_task: str = "room_search",
    city_task: str = "city_search",
) -> Path:
    """Prompt-technique report with per-scenario column groups: the room group
    reports score(20) / token usage / time(s) / time per found item, the city
    group success rate(%) / token usage / time(s) / success time(s)."""
    path = Path(path)
    room = {r.variant: r for r in aggregate([x for x in records if x.task_id == room_task])}
    city = {r.variant: r for r in aggregate([x for x in records if x.task_id == city_task])}

    header = [
        "Method",
        "Room: score(20)",
        "Room: token usage",
        "Room: time(s)",
        "Room: time/item(s)",
        "City: success rate(%)",
        "City: token usage",
        "City: time(s)",
        "City: success time(s)",
    ]
    table = []
    for variant, label in PROMPT_REPORT_VARIANT_LABELS.items():
        room_row = room.get(variant)
        city_row = city.get(variant)
        if room_row is None and city_row is None:
            continue
        cells = [label]
        if room_row is not None:
            per_item = (
                room_row.mean_time / room_row.mean_score if room_row.mean_score > 0 else None
            )
            cells += [
                _fmt(room_row.mean_score),
                _fmt(room_row.mean_tokens, 0),
                _fmt(room_row.mean_time),
                _fmt(per_item) if per_item is not None else UNDEFINED_TIME,
            ]
        else:
            cells += [UNDEFINED_TIME] * 4
        if city_row is not None:
            cells += [
                _fmt(city_row.perfect_rate, 1),
                _fmt(city_row.mean_tokens, 0),
                _fmt(city_row.mean_time),
                _fmt(city_row.mean_success_time)
                if city_row.mean_success_time is not None
                else UNDEFINED_TIME,
            ]
        else:
            cells += [UNDEFINED_TIME] * 4
        table.append(cells)

    if fmt == "markdown":
        lines = [
            "| " + " | ".join(header) + " |",
            "| " + " | ".join("---" for _ in header) + " |",
        ]
        lines += ["| " + " | ".join(row) + " |" for row in table]
        lines += ["", "time/item(s) = Time (s) / distinct items found. " + REPORT_FOOTER, ""]
        path.write_text("\n".join(lines), encoding="utf-8")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(table)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


# -- coverage export ------------------------------------------------------------------

PERCEPTION_TOOLS = ("detect", "vlm_describe")


def export_coverage(
    trace: list[HistoryEntry],
    scenario_path: str | Path,
    out_dir: str | Path,
    cell_size: float = 1.0,
) -> tuple[Path, Path]:
    """Replay a UAV trace, update the coverage grid at every perception pose,
    and write the grid CSV plus a rendering-ready JSON (grid + waypoint/yaw
    path polyline)."""
    world = load_scenario(scenario_path)
    if world.robot_kind != "uav":
        raise ValueError("coverage export needs a UAV scenario trace")
    grid = CoverageGrid(world.bounds, cell_size)
    fov = world.fov

    pose = world.robot_pose
    waypoints = [{"x": pose.x, "y": pose.y, "z": pose.z, "yaw": pose.yaw}]
    for entry in trace:
        if entry.kind != "observation" or not isinstance(entry.payload, Observation):
            continue
        obs = entry.payload
        if obs.is_error:
            continue
        if obs.source_tool == "move_to" and obs.data:
            p = obs.data.get("position", [pose.x, pose.y, pose.z])
            pose = Pose(p[0], p[1], p[2], pose.yaw)
            waypoints.append({"x": pose.x, "y": pose.y, "z": pose.z, "yaw": pose.yaw})
        elif obs.source_tool == "rotate_to" and obs.data:
            pose = Pose(pose.x, pose.y, pose.z, float(obs.data.get("yaw_deg", pose.yaw)))
            waypoints.append({"x": pose.x, "y": pose.y, "z": pose.z, "yaw": pose.yaw})
        elif obs.source_tool in PERCEPTION_TOOLS:
            update_coverage(grid, pose, fov)

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    csv_path = out_path / "coverage.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for iy in range(grid.ny - 1, -1, -1):  # top row first, like a map
            writer.writerow(int(grid.counts[ix, iy]) for ix in range(grid.nx))
    json_path = out_path / "coverage.json"
    json_path.write_text(
        json.dumps(
            {
                "bounds": world.bounds.to_dict(),
                "cell_size": cell_size,
                "nx": grid.nx,
                "ny": grid.ny,
                "counts": grid.counts.tolist(),
                "path": waypoints,
                "entities": [
                    {
                        "id": e.id,
                        "class": e.class_label,
                        "x": e.position[0],
                        "y": e.position[1],
                    }
                    for e in world.entities
                ],
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    return csv_path, json_path
