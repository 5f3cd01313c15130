"""Standard robot tools: thin handlers that validate their inputs and call
into the simulation world.  Handlers receive (action_input, world) so one
registry can serve many sessions over distinct worlds."""

from __future__ import annotations

import math
from typing import Any

from agentloop.llm import ChatModel, ChatRequest
from agentloop.protocol import Segment
from agentloop.simworld import World
from agentloop.toolset import Observation, ToolRegistry, ToolSpec

TALK_RANGE = 1.0  # m, how close the robot must be to talk to a person


def _number(record: dict[str, Any], key: str) -> float:
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"parameter {key!r} must be a number")
    return float(value)


def _move_uav(inp: dict[str, Any], world: World) -> Observation:
    return world.move_to(_number(inp, "x"), _number(inp, "y"), _number(inp, "z"))


def _move_wheeled(inp: dict[str, Any], world: World) -> Observation:
    return world.move_to(_number(inp, "x"), _number(inp, "y"))


def _rotate(inp: dict[str, Any], world: World) -> Observation:
    return world.rotate_to(_number(inp, "yaw_deg"))


def _rotate_by(inp: dict[str, Any], world: World) -> Observation:
    return world.rotate_to(world.robot_pose.yaw + _number(inp, "delta_deg"))


def _detect(inp: dict[str, Any], world: World) -> Observation:
    return world.detect()


def _vlm(inp: dict[str, Any], world: World) -> Observation:
    question = inp.get("question")
    if not isinstance(question, str) or not question:
        raise ValueError("parameter 'question' must be a non-empty string")
    return world.vlm_describe(question)


def _grasp(inp: dict[str, Any], world: World) -> Observation:
    entity_id = inp.get("id")
    if not isinstance(entity_id, str) or not entity_id:
        raise ValueError("parameter 'id' must be a non-empty string")
    return world.grasp(entity_id)


def _release(inp: dict[str, Any], world: World) -> Observation:
    return world.release()


def _talk(inp: dict[str, Any], world: World) -> Observation:
    """Talking to a nearby person yields whatever that person has to say
    (scenario metadata key 'person_messages')."""
    person_id = inp.get("id")
    if not isinstance(person_id, str) or not person_id:
        raise ValueError("parameter 'id' must be a non-empty string")
    person = world.entity(person_id)
    if person is None or person.class_label != "person":
        return Observation(
            source_tool="talk_to_person",
            content=f"Error: no person with id {person_id!r} in the scene.",
            is_error=True,
        )
    dist = math.hypot(
        person.position[0] - world.robot_pose.x, person.position[1] - world.robot_pose.y
    )
    if dist > TALK_RANGE:
        return Observation(
            source_tool="talk_to_person",
            content=(
                f"Error: {person_id!r} is too far away to talk to "
                f"({dist:.2f} m, must be within {TALK_RANGE:g} m)."
            ),
            is_error=True,
        )
    message = world.metadata.get("person_messages", {}).get(person_id)
    if not message:
        content = f"{person_id} has nothing to say."
    else:
        content = f'{person_id} says: "{message}"'
    return Observation(
        source_tool="talk_to_person",
        content=content,
        data={"person": person_id, "message": message or ""},
    )


SUMMARIZER_PROMPT = (
    "You are a summarization assistant. Condense the given text into its key "
    "actionable points, preserving names, places, and object references."
)


def make_summarize_tool(model: ChatModel) -> ToolSpec:
    """Auxiliary-LLM tool: summarization through a model handle.  Just another
    tool in the registry; nothing special-cased about it."""

    def _summarize(inp: dict[str, Any], world: Any) -> Observation:
        text = inp.get("text")
        if not isinstance(text, str) or not text:
            raise ValueError("parameter 'text' must be a non-empty string")
        reply, usage = model.complete(
            ChatRequest(segments=[Segment("system", SUMMARIZER_PROMPT), Segment("user", text)])
        )
        # Report the spend so the session can fold it into its totals.
        return Observation(
            source_tool="summarize",
            content=reply,
            data={
                "token_usage": {
                    "prompt_tokens": usage.prompt_tokens,
                    "completion_tokens": usage.completion_tokens,
                }
            },
        )

    return ToolSpec(
        name="summarize",
        description=(
            "Summarize a piece of text with an auxiliary language model. "
            "Input: {\"text\": string}. Output: the summary as plain text."
        ),
        handler=_summarize,
    )


def uav_tools() -> list[ToolSpec]:
    return [
        ToolSpec(
            name="move_to",
            description=(
                "Fly to an absolute position and hold. "
                "Input: {\"x\": meters, \"y\": meters, \"z\": meters}. "
                "Output: arrival confirmation with the reached coordinates."
            ),
            handler=_move_uav,
        ),
        ToolSpec(
            name="rotate_to",
            description=(
                "Rotate in place to an absolute heading. "
                "Input: {\"yaw_deg\": degrees, 0-360, 0 points along +x}. "
                "Output: the new heading."
            ),
            handler=_rotate,
        ),
        ToolSpec(
            name="rotate_by",
            description=(
                "Rotate in place by a relative angle. "
                "Input: {\"delta_deg\": degrees, positive = counter-clockwise}. "
                "Output: the new heading."
            ),
            handler=_rotate_by,
        ),
        ToolSpec(
            name="detect",
            description=(
                "Run object detection over the current field of view. Input: {}. "
                "Output: the visible objects with id, class, bearing (deg) and range (m)."
            ),
            handler=_detect,
        ),
        ToolSpec(
            name="vlm_describe",
            description=(
                "Ask the onboard vision-language model about the current view. "
                "Input: {\"question\": string}. Output: a natural-language answer."
            ),
            handler=_vlm,
        ),
    ]


def wheeled_tools() -> list[ToolSpec]:
    return [
        ToolSpec(
            name="move_to",
            description=(
                "Drive to an absolute position. "
                "Input: {\"x\": meters, \"y\": meters}. "
                "Output: arrival confirmation with the reached coordinates."
            ),
            handler=_move_wheeled,
        ),
        ToolSpec(
            name="rotate_to",
            description=(
                "Rotate in place to an absolute heading. "
                "Input: {\"yaw_deg\": degrees, 0-360, 0 points along +x}. "
                "Output: the new heading."
            ),
            handler=_rotate,
        ),
        ToolSpec(
            name="rotate_by",
            description=(
                "Rotate in place by a relative angle. "
                "Input: {\"delta_deg\": degrees, positive = counter-clockwise}. "
                "Output: the new heading."
            ),
            handler=_rotate_by,
        ),
        ToolSpec(
            name="detect",
            description=(
                "Run object detection over the current field of view. Input: {}. "
                "Output: the visible objects with id, class, bearing (deg) and range (m)."
            ),
            handler=_detect,
        ),
        ToolSpec(
            name="grasp",
            description=(
                "Pick up a graspable object within arm reach. "
                "Input: {\"id\": entity id string}. "
                "Output: confirmation, or an error naming the violated precondition."
            ),
            handler=_grasp,
        ),
        ToolSpec(
            name="release",
            description=(
                "Put the held object down at the current position. Input: {}. "
                "Output: confirmation naming the released object."
            ),
            handler=_release,
        ),
        ToolSpec(
            name="talk_to_person",
            description=(
                "Talk to a person standing within 1 m. "
                "Input: {\"id\": person entity id}. "
                "Output: what the person says."
            ),
            handler=_talk,
        ),
    ]


def registry_for(robot_kind: str, model: ChatModel | None = None) -> ToolRegistry:
    """Toolset for a robot kind; a model handle adds the summarize tool."""
    registry = ToolRegistry()
    specs = uav_tools() if robot_kind == "uav" else wheeled_tools()
    for spec in specs:
        registry.register(spec)
    if model is not None:
        registry.register(make_summarize_tool(model))
    return registry
