"""Deterministic kinematic simulation: scenes, a UAV and a wheeled robot with
arm, simulated perception, and field-of-view coverage accounting."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from agentloop.toolset import Observation


class ScenarioError(Exception):
    pass


def normalize_yaw(yaw: float) -> float:
    """Fold any angle into [0, 360)."""
    yaw = math.fmod(yaw, 360.0)
    if yaw < 0:
        yaw += 360.0
    return yaw


def signed_bearing(dx: float, dy: float, yaw: float) -> float:
    """Bearing of (dx, dy) relative to heading yaw, in [-180, 180)."""
    absolute = math.degrees(math.atan2(dy, dx))
    rel = math.fmod(absolute - yaw, 360.0)
    if rel >= 180.0:
        rel -= 360.0
    elif rel < -180.0:
        rel += 360.0
    return rel


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))
        if self.z < 0:
            raise ValueError("z must be non-negative")


@dataclass(frozen=True)
class FovParams:
    half_angle_deg: float
    range_m: float

    def __post_init__(self) -> None:
        if not 0 < self.half_angle_deg <= 90:
            raise ValueError("half_angle_deg must be in (0, 90]")
        if self.range_m <= 0:
            raise ValueError("range_m must be positive")

    def covers(self, dx: float, dy: float, yaw: float) -> bool:
        """Sector-and-range visibility predicate (2D, boundary inclusive)."""
        if math.hypot(dx, dy) > self.range_m:
            return False
        return abs(signed_bearing(dx, dy, yaw)) <= self.half_angle_deg


@dataclass(frozen=True)
class Bounds:
    min_x: float
    min_y: float
    min_z: float
    max_x: float
    max_y: float
    max_z: float

    def contains(self, x: float, y: float, z: float) -> bool:
        return (
            self.min_x <= x <= self.max_x
            and self.min_y <= y <= self.max_y
            and self.min_z <= z <= self.max_z
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "min": [self.min_x, self.min_y, self.min_z],
            "max": [self.max_x, self.max_y, self.max_z],
        }


@dataclass
class Entity:
    id: str
    class_label: str
    position: tuple[float, float, float]
    graspable: bool = False


DEFAULT_SPEED = 1.0       # m/s
DEFAULT_YAW_RATE = 90.0   # deg/s
DEFAULT_REACH = 0.8       # m, grasp radius
GRASP_DURATION = 2.0      # s, fixed for grasp and release


class World:
    """Mutable simulation state for one session.

    All motion is straight-line constant-speed; perception is sector+range
    with no occlusion.  Identical operation sequences on identical initial
    worlds yield identical final worlds and sim clocks.
    """

    def __init__(
        self,
        bounds: Bounds,
        robot_kind: str,
        robot_pose: Pose,
        entities: list[Entity],
        origin: tuple[float, float, float],
        fov: FovParams,
        speed: float = DEFAULT_SPEED,
        yaw_rate: float = DEFAULT_YAW_RATE,
        reach: float = DEFAULT_REACH,
        metadata: dict[str, Any] | None = None,
    ) -> None:
        if robot_kind not in ("uav", "wheeled_arm"):
            raise ScenarioError(f"unknown robot kind {robot_kind!r}")
        if not bounds.contains(robot_pose.x, robot_pose.y, robot_pose.z):
            raise ScenarioError("robot pose outside scene bounds")
        seen: set[str] = set()
        for e in entities:
            if e.id in seen:
                raise ScenarioError(f"duplicate entity id {e.id!r}")
            seen.add(e.id)
            if not bounds.contains(*e.position):
                raise ScenarioError(f"entity {e.id!r} outside scene bounds")
        self.bounds = bounds
        self.robot_kind = robot_kind
        self.robot_pose = robot_pose
        self.entities = entities
        self.origin = origin
        self.fov = fov
        self.speed = speed
        self.yaw_rate = yaw_rate
        self.reach = reach
        self.metadata = metadata or {}
        self.held_entity: str | None = None
        self.sim_clock = 0.0
        # Wheeled platforms keep their deck height for the whole run.
        self.platform_height = robot_pose.z

    # -- helpers -----------------------------------------------------------

    def entity(self, entity_id: str) -> Entity | None:
        for e in self.entities:
            if e.id == entity_id:
                return e
        return None

    def entities_of_class(self, class_label: str) -> list[Entity]:
        return [e for e in self.entities if e.class_label == class_label]

    def _advance(self, seconds: float) -> None:
        self.sim_clock += seconds

    def _carry_held(self) -> None:
        if self.held_entity is not None:
            held = self.entity(self.held_entity)
            if held is not None:
                held.position = (self.robot_pose.x, self.robot_pose.y, self.robot_pose.z)

    # -- motion ------------------------------------------------------------

    def move_to(self, x: float, y: float, z: float | None = None) -> Observation:
        """Straight-line move; duration = euclidean distance / speed.
        The wheeled robot moves at its fixed platform height."""
        if self.robot_kind == "wheeled_arm" or z is None:
            z = self.platform_height if self.robot_kind == "wheeled_arm" else self.robot_pose.z
        if not self.bounds.contains(x, y, z):
            return Observation(
                source_tool="move_to",
                content=f"Error: target ({x:g}, {y:g}, {z:g}) is outside the scene bounds.",
                is_error=True,
            )
        pose = self.robot_pose
        dist = math.sqrt((x - pose.x) ** 2 + (y - pose.y) ** 2 + (z - pose.z) ** 2)
        elapsed = dist / self.speed
        self.robot_pose = Pose(x, y, z, pose.yaw)
        self._carry_held()
        self._advance(elapsed)
        return Observation(
            source_tool="move_to",
            content=f"Arrived at ({x:g}, {y:g}, {z:g}).",
            data={"position": [x, y, z]},
            sim_elapsed=elapsed,
        )

    def rotate_to(self, yaw: float) -> Observation:
        """Rotate in place to an absolute heading; duration = shortest angular
        difference / yaw rate."""
        target = normalize_yaw(yaw)
        diff = abs(target - self.robot_pose.yaw)
        if diff > 180.0:
            diff = 360.0 - diff
        elapsed = diff / self.yaw_rate
        self.robot_pose = Pose(self.robot_pose.x, self.robot_pose.y, self.robot_pose.z, target)
        self._advance(elapsed)
        return Observation(
            source_tool="rotate_to",
            content=f"Heading is now {target:g} degrees.",
            data={"yaw_deg": target},
            sim_elapsed=elapsed,
        )

    # -- perception ---------------------------------------------------------

    def visible_entities(self, fov: FovParams | None = None) -> list[dict[str, Any]]:
        """Entities inside the sensor sector: horizontal range <= fov range and
        |signed bearing| <= half angle, both boundaries inclusive. No occlusion."""
        fov = fov or self.fov
        pose = self.robot_pose
        out = []
        for e in self.entities:
            dx = e.position[0] - pose.x
            dy = e.position[1] - pose.y
            rng = math.hypot(dx, dy)
            if rng > fov.range_m:
                continue
            bearing = signed_bearing(dx, dy, pose.yaw)
            if abs(bearing) > fov.half_angle_deg:
                continue
            out.append(
                {"id": e.id, "class_label": e.class_label, "bearing_deg": bearing, "range_m": rng}
            )
        return out

    def detect(self, fov: FovParams | None = None) -> Observation:
        hits = self.visible_entities(fov)
        # Scalar companions to the detection list so downstream consumers
        # (e.g. action-script conditions) can branch on them.
        data: dict[str, Any] = {"detections": hits, "count": len(hits)}
        if hits:
            nearest = min(hits, key=lambda h: (h["range_m"], h["id"]))
            data.update(
                nearest_id=nearest["id"],
                nearest_class=nearest["class_label"],
                nearest_range_m=nearest["range_m"],
                nearest_bearing_deg=nearest["bearing_deg"],
            )
        else:
            return Observation(
                source_tool="detect",
                content="Nothing detected in the current field of view.",
                data=data,
            )
        parts = [
            f"{h['class_label']} (id {h['id']}) at bearing {h['bearing_deg']:.1f} deg, "
            f"range {h['range_m']:.2f} m"
            for h in hits
        ]
        return Observation(
            source_tool="detect",
            content="Detected: " + "; ".join(parts) + ".",
            data=data,
        )

    def vlm_describe(self, question: str, fov: FovParams | None = None) -> Observation:
        """Simulated vision-language answer built deterministically from the
        detection result.  A real backend may replace this via tool config."""
        hits = self.visible_entities(fov)
        labels = sorted({h["class_label"] for h in hits})
        question_lc = question.lower()
        named = [h for h in hits if h["class_label"].lower() in question_lc]
        if named:
            parts = [
                f"{h['class_label']} at bearing {h['bearing_deg']:.1f} deg, "
                f"range {h['range_m']:.2f} m"
                for h in named
            ]
            content = "Yes: " + "; ".join(parts) + "."
        else:
            asked = [
                label
                for label in {e.class_label for e in self.entities}
                if label.lower() in question_lc
            ]
            if asked:
                content = f"No {', '.join(sorted(asked))} is visible from here."
            elif labels:
                content = "In view: " + ", ".join(labels) + "."
            else:
                content = "Nothing is visible from here."
        return Observation(
            source_tool="vlm_describe",
            content=content,
            data={"visible_classes": labels, "detections": hits},
        )

    # -- manipulation --------------------------------------------------------

    def grasp(self, entity_id: str) -> Observation:
        if self.held_entity is not None:
            return Observation(
                source_tool="grasp",
                content=f"Error: already holding {self.held_entity!r}; release it first.",
                is_error=True,
            )
        target = self.entity(entity_id)
        if target is None:
            return Observation(
                source_tool="grasp",
                content=f"Error: no entity with id {entity_id!r} in the scene.",
                is_error=True,
            )
        if not target.graspable:
            return Observation(
                source_tool="grasp",
                content=f"Error: {entity_id!r} ({target.class_label}) is not graspable.",
                is_error=True,
            )
        dist = math.hypot(
            target.position[0] - self.robot_pose.x, target.position[1] - self.robot_pose.y
        )
        if dist > self.reach:
            return Observation(
                source_tool="grasp",
                content=(
                    f"Error: {entity_id!r} is out of reach "
                    f"({dist:.2f} m away, reach is {self.reach:g} m)."
                ),
                is_error=True,
            )
        self.held_entity = entity_id
        self._carry_held()
        self._advance(GRASP_DURATION)
        return Observation(
            source_tool="grasp",
            content=f"Grasped {entity_id} ({target.class_label}).",
            data={"held": entity_id},
            sim_elapsed=GRASP_DURATION,
        )

    def release(self) -> Observation:
        if self.held_entity is None:
            return Observation(
                source_tool="release",
                content="Error: nothing is held.",
                is_error=True,
            )
        released = self.held_entity
        held = self.entity(released)
        if held is not None:
            held.position = (self.robot_pose.x, self.robot_pose.y, 0.0)
        self.held_entity = None
        self._advance(GRASP_DURATION)
        return Observation(
            source_tool="release",
            content=f"Released {released} at ({self.robot_pose.x:g}, {self.robot_pose.y:g}).",
            data={"released": released},
            sim_elapsed=GRASP_DURATION,
        )

    # -- snapshots ------------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        """Complete serializable copy of the world state."""
        return {
            "bounds": self.bounds.to_dict(),
            "robot": {
                "kind": self.robot_kind,
                "pose": [self.robot_pose.x, self.robot_pose.y, self.robot_pose.z, self.robot_pose.yaw],
                "speed": self.speed,
                "yaw_rate": self.yaw_rate,
                "reach": self.reach,
            },
            "fov": {"half_angle_deg": self.fov.half_angle_deg, "range_m": self.fov.range_m},
            "entities": [
                {
                    "id": e.id,
                    "class": e.class_label,
                    "x": e.position[0],
                    "y": e.position[1],
                    "z": e.position[2],
                    "graspable": e.graspable,
                }
                for e in self.entities
            ],
            "origin": list(self.origin),
            "metadata": copy.deepcopy(self.metadata),
            "held_entity": self.held_entity,
            "sim_clock": self.sim_clock,
        }


SCENARIO_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["bounds", "robot", "fov", "entities", "origin"],
    "properties": {
        "bounds": {
            "type": "object",
            "required": ["min", "max"],
            "properties": {
                "min": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                "max": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
            },
        },
        "robot": {
            "type": "object",
            "required": ["kind", "pose"],
            "properties": {
                "kind": {"enum": ["uav", "wheeled_arm"]},
                "pose": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                "speed": {"type": "number", "exclusiveMinimum": 0},
                "yaw_rate": {"type": "number", "exclusiveMinimum": 0},
                "reach": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "fov": {
            "type": "object",
            "required": ["half_angle_deg", "range_m"],
            "properties": {
                "half_angle_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 90},
                "range_m": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "entities": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "class", "x", "y", "z"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "class": {"type": "string", "minLength": 1},
                    "x": {"type": "number"},
                    "y": {"type": "number"},
                    "z": {"type": "number"},
                    "graspable": {"type": "boolean"},
                },
            },
        },
        "origin": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        "metadata": {"type": "object"},
    },
}


def world_from_dict(doc: dict[str, Any]) -> World:
    """Build a world from a scenario/snapshot document (already validated)."""
    bmin, bmax = doc["bounds"]["min"], doc["bounds"]["max"]
    bounds = Bounds(bmin[0], bmin[1], bmin[2], bmax[0], bmax[1], bmax[2])
    robot = doc["robot"]
    px, py, pz, pyaw = robot["pose"]
    world = World(
        bounds=bounds,
        robot_kind=robot["kind"],
        robot_pose=Pose(px, py, pz, pyaw),
        entities=[
            Entity(
                id=e["id"],
                class_label=e["class"],
                position=(e["x"], e["y"], e["z"]),
                graspable=bool(e.get("graspable", False)),
            )
            for e in doc["entities"]
        ],
        origin=tuple(doc["origin"]),
        fov=FovParams(doc["fov"]["half_angle_deg"], doc["fov"]["range_m"]),
        speed=robot.get("speed", DEFAULT_SPEED),
        yaw_rate=robot.get("yaw_rate", DEFAULT_YAW_RATE),
        reach=robot.get("reach", DEFAULT_REACH),
        metadata=doc.get("metadata"),
    )
    if doc.get("held_entity"):
        world.held_entity = doc["held_entity"]
        world._carry_held()
    world.sim_clock = float(doc.get("sim_clock", 0.0))
    return world


def load_scenario(path: str | Path) -> World:
    """Load and validate a scenario file.

    Structural defects report the failing field path; semantic defects
    (out-of-bounds entities, duplicate ids) name the entity.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ScenarioError(f"scenario schema violation at {where}: {exc.message}") from exc
    return world_from_dict(doc)


# -- coverage -----------------------------------------------------------------


class CoverageGrid:
    """Per-cell counts of how many perception poses covered each cell.

    The grid is aligned to the scene bounds; a cell belongs to a pose's view
    when its center passes the same sector+range predicate detection uses.
    """

    def __init__(self, bounds: Bounds, cell_size: float) -> None:
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.bounds = bounds
        self.cell_size = cell_size
        self.nx = math.ceil((bounds.max_x - bounds.min_x) / cell_size)
        self.ny = math.ceil((bounds.max_y - bounds.min_y) / cell_size)
        self.counts = np.zeros((self.nx, self.ny), dtype=np.int64)
        # Precomputed cell-center coordinates, shaped like counts.
        xs = bounds.min_x + (np.arange(self.nx) + 0.5) * cell_size
        ys = bounds.min_y + (np.arange(self.ny) + 0.5) * cell_size
        self._cx, self._cy = np.meshgrid(xs, ys, indexing="ij")

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.bounds.min_x + (ix + 0.5) * self.cell_size,
            self.bounds.min_y + (iy + 0.5) * self.cell_size,
        )

    def total(self) -> int:
        return int(self.counts.sum())


def update_coverage(grid: CoverageGrid, pose: Pose, fov: FovParams) -> int:
    """Increment every cell whose center is inside the pose's view sector.
    Returns the number of cells incremented."""
    dx = grid._cx - pose.x
    dy = grid._cy - pose.y
    rng = np.hypot(dx, dy)
    # Same fold as signed_bearing so detection and coverage agree bitwise.
    bearing = np.fmod(np.degrees(np.arctan2(dy, dx)) - pose.yaw, 360.0)
    bearing = np.where(bearing >= 180.0, bearing - 360.0, bearing)
    bearing = np.where(bearing < -180.0, bearing + 360.0, bearing)
    mask = (rng <= fov.range_m) & (np.abs(bearing) <= fov.half_angle_deg)
    grid.counts[mask] += 1
    return int(mask.sum())
