import json

import pytest

from agentloop.simworld import Bounds, Entity, FovParams, Pose, World
from agentloop.tasks import builtin_tasks
from agentloop.toolset import Observation, ToolRegistry, ToolSpec


def make_world(robot_kind="uav", yaw=0.0, fov=None, entities=None, speed=1.0):
    """A 20x20 box centered on the origin with the robot at (0, 0)."""
    z = 1.0 if robot_kind == "uav" else 0.2
    return World(
        bounds=Bounds(-10, -10, 0, 10, 10, 5),
        robot_kind=robot_kind,
        robot_pose=Pose(0, 0, z, yaw),
        entities=entities if entities is not None else [],
        origin=(0.0, 0.0, z),
        fov=fov or FovParams(45.0, 5.0),
        speed=speed,
    )


def entity(eid, cls="bottle", x=0.0, y=0.0, z=0.0, graspable=True):
    return Entity(id=eid, class_label=cls, position=(x, y, z), graspable=graspable)


def echo_tool(name="echo", description="Echo the input. Input: any object. Output: its JSON."):
    def handler(inp, world):
        return Observation(source_tool=name, content=f"echo {json.dumps(inp, sort_keys=True)}")

    return ToolSpec(name=name, description=description, handler=handler)


def make_registry(*specs):
    registry = ToolRegistry()
    for spec in specs:
        registry.register(spec)
    return registry


@pytest.fixture
def tasks():
    return builtin_tasks()


@pytest.fixture
def cafe_path(tasks):
    return tasks["delivery"].scenario_path


@pytest.fixture
def room_path(tasks):
    return tasks["room_search"].scenario_path
