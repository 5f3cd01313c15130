"""Tool registry: metadata, availability state, dispatch, and observation production."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable


class ToolsetError(Exception):
    pass


class DuplicateToolError(ToolsetError):
    pass


class UnknownToolError(ToolsetError):
    pass


@dataclass(frozen=True)
class Observation:
    """Feedback a tool returns to the agent after an action.

    ``content`` is the natural-language feedback fed back to the model;
    ``data`` optionally carries a machine-readable payload (e.g. a detection
    list); ``sim_elapsed`` is the simulated time the action consumed.
    """

    source_tool: str
    content: str
    data: dict[str, Any] | None = None
    is_error: bool = False
    sim_elapsed: float = 0.0

    def __post_init__(self) -> None:
        if not self.content:
            raise ValueError("observation content must be non-empty")
        if self.sim_elapsed < 0:
            raise ValueError("sim_elapsed must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "source_tool": self.source_tool,
            "content": self.content,
            "data": self.data,
            "is_error": self.is_error,
            "sim_elapsed": self.sim_elapsed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Observation:
        return cls(
            source_tool=d["source_tool"],
            content=d["content"],
            data=d.get("data"),
            is_error=bool(d.get("is_error", False)),
            sim_elapsed=float(d.get("sim_elapsed", 0.0)),
        )


# A handler receives the action_input record and a world handle, and returns
# an Observation.  Input schema validation is the handler's responsibility.
ToolHandler = Callable[[dict[str, Any], Any], Observation]


@dataclass
class ToolSpec:
    """A registered tool: unique name, a description that doubles as the
    model's manual (it must state input and output formats), an availability
    flag, and the handler binding."""

    name: str
    description: str
    handler: ToolHandler
    enabled: bool = True


def catalog_block(spec: ToolSpec) -> str:
    """The exact one-block-per-tool format embedded in system prompts."""
    return f"TOOL {spec.name}: {spec.description}"


@dataclass
class ToolRegistry:
    """Ordered name -> ToolSpec map.  Registration order is stable so the
    prompt catalog is deterministic.

    Reads are safe from multiple threads; mutations are serialized through
    an internal lock.
    """

    _specs: dict[str, ToolSpec] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def register(self, spec: ToolSpec) -> None:
        if not spec.name:
            raise ValueError("tool name must be non-empty")
        if not spec.description:
            raise ValueError(f"tool {spec.name!r} has an empty description")
        with self._lock:
            if spec.name in self._specs:
                raise DuplicateToolError(f"tool {spec.name!r} is already registered")
            self._specs[spec.name] = spec

    def set_enabled(self, name: str, flag: bool) -> None:
        with self._lock:
            if name not in self._specs:
                raise UnknownToolError(f"no tool named {name!r}")
            self._specs[name].enabled = flag

    def get(self, name: str) -> ToolSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownToolError(f"no tool named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def __len__(self) -> int:
        return len(self._specs)

    def specs(self) -> list[ToolSpec]:
        """All specs in registration order (enabled or not)."""
        with self._lock:
            return list(self._specs.values())

    def describe_enabled(self) -> list[tuple[str, str]]:
        """(name, description) for enabled tools, in registration order."""
        with self._lock:
            return [(s.name, s.description) for s in self._specs.values() if s.enabled]

    def invoke(self, name: str, action_input: Any, world: Any) -> Observation:
        """Dispatch a tool call.  Total: every failure comes back as an error
        Observation, never an exception — the agent loop must keep running
        and only the agent decides to stop."""
        with self._lock:
            spec = self._specs.get(name)
            enabled_names = [s.name for s in self._specs.values() if s.enabled]
        if spec is None:
            return Observation(
                source_tool=name or "(unnamed)",
                content=(
                    f"Error: no tool named {name!r}. "
                    f"Available tools: {', '.join(enabled_names) or '(none)'}."
                ),
                is_error=True,
            )
        if not spec.enabled:
            return Observation(
                source_tool=name,
                content=f"Error: tool {name!r} is disabled for this task.",
                is_error=True,
            )
        if not isinstance(action_input, dict):
            return Observation(
                source_tool=name,
                content="Error: action_input must be a JSON object with the tool's parameters.",
                is_error=True,
            )
        try:
            obs = spec.handler(action_input, world)
        except Exception as exc:  # noqa: BLE001 - invoke is total by contract
            return Observation(
                source_tool=name,
                content=f"Error: tool {name!r} failed: {exc}",
                is_error=True,
            )
        if obs.source_tool != name:
            obs = Observation(
                source_tool=name,
                content=obs.content,
                data=obs.data,
                is_error=obs.is_error,
                sim_elapsed=obs.sim_elapsed,
            )
        return obs
