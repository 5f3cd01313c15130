"""Built-in benchmark tasks: scenario bindings, task prompts, prompt-variant
guidance assembly, and milestone rubrics with their predicate registry."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Literal

from agentloop.llm import ChatModel
from agentloop.protocol import FINAL_ACTION
from agentloop.session import HistoryEntry, SessionConfig
from agentloop.simworld import World
from agentloop.toolset import Observation, ToolRegistry
from agentloop.tools import make_summarize_tool, registry_for

PromptVariant = Literal["zero_shot", "one_shot", "cot", "one_shot_cot"]

ORIGIN_RADIUS = 0.3     # m, "returned to the origin"
SPOT_RADIUS = 0.4       # m, a bottle counts as resting on its spot
HANDOVER_RADIUS = 0.5   # m, sub-task bottle near the recipient
APPROACH_RADIUS = 1.0   # m, close enough to a person

COT_GUIDANCE = (
    "Think step by step about coverage: before each move, enumerate the "
    "regions of the scene you have not yet observed, pick the action that "
    "gains the most new information or progress, and spell the reasoning out "
    "in the message field before acting."
)


def scenario_path(name: str) -> Path:
    return Path(str(resources.files("agentloop").joinpath("scenarios", f"{name}.json")))


def _one_shot_text(name: str) -> str:
    return resources.files("agentloop").joinpath(
        "scenarios", f"{name}_one_shot.txt"
    ).read_text(encoding="utf-8")


# -- rubrics -------------------------------------------------------------------

Predicate = Callable[[World, list[HistoryEntry], World], bool]


@dataclass(frozen=True)
class Milestone:
    name: str
    points: int
    predicate_id: str


@dataclass(frozen=True)
class Rubric:
    milestones: tuple[Milestone, ...]
    max_points: int

    def __post_init__(self) -> None:
        total = sum(m.points for m in self.milestones)
        if total != self.max_points:
            raise ValueError(f"milestone points sum to {total}, expected {self.max_points}")


def _horizontal(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _observations(trace: list[HistoryEntry]) -> list[Observation]:
    return [e.payload for e in trace if e.kind == "observation" and isinstance(e.payload, Observation)]


def _final_text(trace: list[HistoryEntry]) -> str:
    for entry in reversed(trace):
        if entry.kind == "final":
            return str(entry.payload)
    return ""


def _ended_with_final_response(trace: list[HistoryEntry]) -> bool:
    steps = [e for e in trace if e.kind == "agent_step"]
    if not steps:
        return False
    last = steps[-1].payload
    return getattr(last, "action", None) == FINAL_ACTION


def _detected_ids(trace: list[HistoryEntry]) -> set[str]:
    ids: set[str] = set()
    for obs in _observations(trace):
        if obs.data:
            for hit in obs.data.get("detections", []):
                if isinstance(hit, dict) and "id" in hit:
                    ids.add(hit["id"])
    return ids


def _person_near_class(world: World, class_label: str) -> str | None:
    """The person standing nearest to any entity of the given class."""
    anchors = world.entities_of_class(class_label)
    persons = world.entities_of_class("person")
    if not anchors or not persons:
        return None
    best = min(
        persons,
        key=lambda p: min(_horizontal(p.position, a.position) for a in anchors),
    )
    return best.id


def _nearest_bottle_id(world: World) -> str | None:
    bottles = world.entities_of_class("bottle")
    if not bottles:
        return None
    pose = world.robot_pose
    return min(
        bottles, key=lambda b: (_horizontal(b.position, (pose.x, pose.y)), b.id)
    ).id


def _pred_bottle_on_spot(bottle_id: str) -> Predicate:
    def pred(initial: World, trace: list[HistoryEntry], final: World) -> bool:
        assignment = initial.metadata.get("spot_assignments", {}).get(bottle_id)
        bottle = final.entity(bottle_id)
        spot = final.entity(assignment) if assignment else None
        if bottle is None or spot is None:
            return False
        if final.held_entity == bottle_id:
            return False
        return _horizontal(bottle.position, spot.position) <= SPOT_RADIUS

    return pred


def _pred_returned_to_origin(initial: World, trace: list[HistoryEntry], final: World) -> bool:
    # Returning presupposes having left: a robot that never moved scores no
    # return point even though it sits at the origin.
    moved = any(
        obs.source_tool == "move_to" and not obs.is_error for obs in _observations(trace)
    )
    pose = final.robot_pose
    return moved and _horizontal((pose.x, pose.y), final.origin) <= ORIGIN_RADIUS


def _pred_held_nearest(initial: World, trace: list[HistoryEntry], final: World) -> bool:
    target = _nearest_bottle_id(initial)
    if target is None:
        return False
    for obs in _observations(trace):
        if obs.source_tool == "grasp" and not obs.is_error and obs.data:
            if obs.data.get("held") == target:
                return True
    return False


def _pred_home_with_nearest(initial: World, trace: list[HistoryEntry], final: World) -> bool:
    target = _nearest_bottle_id(initial)
    if target is None or final.held_entity != target:
        return False
    return _pred_returned_to_origin(initial, trace, final)


def _pred_finished_with_report(initial: World, trace: list[HistoryEntry], final: World) -> bool:
    return _ended_with_final_response(trace) and bool(_final_text(trace))


def _pred_approached_requester(initial: World, trace: list[HistoryEntry], final: World) -> bool:
    requester = _person_near_class(initial, "chair")
    if requester is None:
        return False
    target = initial.entity(requester).position
    # Arrival positions over the whole run, plus the start and end poses.
    positions = [(initial.robot_pose.x, initial.robot_pose.y)]
    for obs in _observations(trace):
        if obs.source_tool == "move_to" and not obs.is_error and obs.data:
            p = obs.data.get("position")
            if isinstance(p, list) and len(p) >= 2:
                positions.append((p[0], p[1]))
    positions.append((final.robot_pose.x, final.robot_pose.y))
    return any(_horizontal(p, target) <= APPROACH_RADIUS for p in positions)


def _pred_bottle_near_recipient(initial: World, trace: list[HistoryEntry], final: World) -> bool:
    recipient = _person_near_class(initial, "lamp")
    if recipient is None:
        return False
    target = final.entity(recipient).position
    return any(
        _horizontal(b.position, target) <= HANDOVER_RADIUS
        and final.held_entity != b.id
        for b in final.entities_of_class("bottle")
    )


def _pred_report_mentions(term: str) -> Predicate:
    def pred(initial: World, trace: list[HistoryEntry], final: World) -> bool:
        return term.lower() in _final_text(trace).lower()

    return pred


def _pred_item_detected(entity_id: str) -> Predicate:
    def pred(initial: World, trace: list[HistoryEntry], final: World) -> bool:
        return entity_id in _detected_ids(trace)

    return pred


def _pred_class_seen(class_label: str) -> Predicate:
    def pred(initial: World, trace: list[HistoryEntry], final: World) -> bool:
        targets = {e.id for e in initial.entities_of_class(class_label)}
        if targets & _detected_ids(trace):
            return True
        # The VLM answer counts as seeing it, too.
        for obs in _observations(trace):
            if obs.source_tool == "vlm_describe" and obs.data:
                for hit in obs.data.get("detections", []):
                    if isinstance(hit, dict) and hit.get("id") in targets:
                        return True
        return False

    return pred


_SIMPLE_PREDICATES: dict[str, Predicate] = {
    "returned_to_origin": _pred_returned_to_origin,
    "searching_held_nearest": _pred_held_nearest,
    "searching_home_with_nearest": _pred_home_with_nearest,
    "finished_with_final_response": _pred_finished_with_report,
    "handover_approached_requester": _pred_approached_requester,
    "handover_bottle_near_recipient": _pred_bottle_near_recipient,
}

_PARAMETERIZED_PREDICATES: dict[str, Callable[[str], Predicate]] = {
    "bottle_on_spot": _pred_bottle_on_spot,
    "report_mentions": _pred_report_mentions,
    "item_detected": _pred_item_detected,
    "class_seen": _pred_class_seen,
}


def resolve_predicate(predicate_id: str) -> Predicate:
    if ":" in predicate_id:
        name, param = predicate_id.split(":", 1)
        factory = _PARAMETERIZED_PREDICATES.get(name)
        if factory is None:
            raise KeyError(f"unknown predicate id {predicate_id!r}")
        return factory(param)
    try:
        return _SIMPLE_PREDICATES[predicate_id]
    except KeyError:
        raise KeyError(f"unknown predicate id {predicate_id!r}") from None


# -- task specs -----------------------------------------------------------------


@dataclass
class TaskSpec:
    id: str
    scenario_path: Path
    task_prompt: str
    rubric: Rubric
    limits: SessionConfig
    prompt_variant: PromptVariant = "zero_shot"
    one_shot_name: str | None = None
    needs_summarizer: bool = False

    def extra_guidance(self) -> str:
        """Guidance blocks implied by the prompt variant."""
        parts = []
        if self.prompt_variant in ("one_shot", "one_shot_cot") and self.one_shot_name:
            parts.append(_one_shot_text(self.one_shot_name))
        if self.prompt_variant in ("cot", "one_shot_cot"):
            parts.append(COT_GUIDANCE)
        base = self.limits.extra_guidance
        if base:
            parts.insert(0, base)
        return "\n\n".join(parts)

    def session_config(self, agent_kind: str = "leo") -> SessionConfig:
        return replace(
            self.limits,
            agent_kind=agent_kind,  # type: ignore[arg-type]
            extra_guidance=self.extra_guidance(),
        )


def with_variant(task: TaskSpec, variant: PromptVariant) -> TaskSpec:
    return replace(task, prompt_variant=variant)


_DELIVERY_RUBRIC = Rubric(
    milestones=(
        Milestone("bottle_1 on spot_1", 3, "bottle_on_spot:bottle_1"),
        Milestone("bottle_2 on spot_2", 3, "bottle_on_spot:bottle_2"),
        Milestone("bottle_3 on spot_3", 3, "bottle_on_spot:bottle_3"),
        Milestone("returned to origin", 1, "returned_to_origin"),
    ),
    max_points=10,
)

_SEARCHING_RUBRIC = Rubric(
    milestones=(
        Milestone("nearest bottle held at some point", 4, "searching_held_nearest"),
        Milestone("back at origin holding it", 4, "searching_home_with_nearest"),
        Milestone("finished with a final report", 2, "finished_with_final_response"),
    ),
    max_points=10,
)

_HANDOVER_RUBRIC = Rubric(
    milestones=(
        Milestone("approached the person by the chair", 2, "handover_approached_requester"),
        Milestone("bottle placed near the person by the lamp", 4, "handover_bottle_near_recipient"),
        Milestone("returned to origin", 2, "returned_to_origin"),
        Milestone("report covers the sub-task", 2, "report_mentions:bottle"),
    ),
    max_points=10,
)

_ROOM_RUBRIC = Rubric(
    milestones=tuple(
        Milestone(f"found obj_{i:02d}", 1, f"item_detected:obj_{i:02d}") for i in range(1, 21)
    ),
    max_points=20,
)

_CITY_RUBRIC = Rubric(
    milestones=(
        Milestone("pavilion entered the field of view", 6, "class_seen:pavilion"),
        Milestone("report names the pavilion", 4, "report_mentions:pavilion"),
    ),
    max_points=10,
)


def builtin_tasks() -> dict[str, TaskSpec]:
    wheeled_role = (
        "You are the onboard operator of a wheeled mobile robot with an arm in "
        "a cafe. Coordinates are meters in the scene frame; the origin is (0, 0)."
    )
    uav_role = (
        "You are the onboard operator of a quadrotor UAV. Coordinates are "
        "meters in the scene frame; keep z at a safe flight height."
    )
    return {
        "delivery": TaskSpec(
            id="delivery",
            scenario_path=scenario_path("cafe"),
            task_prompt=(
                "Three bottles must be delivered to three target spots. "
                "Bottles: bottle_1 at (2, 3), bottle_2 at (-3, 2.5), bottle_3 at (4, -2). "
                "Spots: spot_1 at (-4, -4), spot_2 at (5, 5), spot_3 at (-5, 4). "
                "Place bottle_1 on spot_1, bottle_2 on spot_2, and bottle_3 on spot_3, "
                "in any order you like, then return to the origin (0, 0)."
            ),
            rubric=_DELIVERY_RUBRIC,
            limits=SessionConfig(role_definition=wheeled_role, max_steps=40),
            one_shot_name="delivery",
        ),
        "searching": TaskSpec(
            id="searching",
            scenario_path=scenario_path("cafe"),
            task_prompt=(
                "Search the scene for the nearest bottle, pick it up, and return "
                "to the origin (0, 0) still holding it. Report when done."
            ),
            rubric=_SEARCHING_RUBRIC,
            limits=SessionConfig(role_definition=wheeled_role, max_steps=40),
            one_shot_name="searching",
        ),
        "handover": TaskSpec(
            id="handover",
            scenario_path=scenario_path("cafe"),
            task_prompt=(
                "Two people are in the cafe, one by the chair and one by the lamp. "
                "Approach the person by the chair (within 1 m), talk to them to "
                "receive a sub-task, complete that sub-task, then return to the "
                "origin (0, 0) and report what you did."
            ),
            rubric=_HANDOVER_RUBRIC,
            limits=SessionConfig(role_definition=wheeled_role, max_steps=40),
            one_shot_name="handover",
            needs_summarizer=True,
        ),
        "room_search": TaskSpec(
            id="room_search",
            scenario_path=scenario_path("room"),
            task_prompt=(
                "Locate as many distinct objects in the room as possible using "
                "target detection. Move and rotate so your field of view covers "
                "the whole room, then report what you found."
            ),
            rubric=_ROOM_RUBRIC,
            limits=SessionConfig(role_definition=uav_role, max_steps=40),
            one_shot_name="room",
        ),
        "city_search": TaskSpec(
            id="city_search",
            scenario_path=scenario_path("city"),
            task_prompt=(
                "Find the pavilion somewhere in the city using the vision-language "
                "tool, fly above it, and report."
            ),
            rubric=_CITY_RUBRIC,
            limits=SessionConfig(role_definition=uav_role, max_steps=40),
            one_shot_name="city",
        ),
    }


def registry_for_task(
    task: TaskSpec, model: ChatModel | None = None, robot_kind: str | None = None
) -> ToolRegistry:
    """Toolset matching the task's robot platform; the handover task also gets
    the auxiliary summarization tool (which needs a model handle)."""
    if robot_kind is None:
        from agentloop.simworld import load_scenario

        robot_kind = load_scenario(task.scenario_path).robot_kind
    registry = registry_for(robot_kind)
    if task.needs_summarizer and model is not None:
        registry.register(make_summarize_tool(model))
    return registry
