"""agentloop: an LLM-driven robot agent loop with a JSON step protocol, a
registrable toolset, rival agent architectures, a kinematic simulation world,
a benchmark harness, and a pub/sub + WebSocket operator gateway."""

from agentloop.llm import (
    ChatRequest,
    HttpChatModel,
    ScriptedModel,
    TokenUsage,
    count_tokens,
    model_from_spec,
)
from agentloop.protocol import (
    AgentMessage,
    ParseFailure,
    ParseOutcome,
    Segment,
    parse_agent_message,
    render_history,
    render_system_prompt,
    serialize_agent_message,
)
from agentloop.session import (
    HistoryEntry,
    LogicalClock,
    Session,
    SessionConfig,
    SessionResult,
    load_trace,
    run_session,
    save_trace,
)
from agentloop.simworld import (
    CoverageGrid,
    Entity,
    FovParams,
    Pose,
    World,
    load_scenario,
    update_coverage,
)
from agentloop.toolset import Observation, ToolRegistry, ToolSpec

__version__ = "0.1.0"

__all__ = [
    "AgentMessage",
    "ChatRequest",
    "CoverageGrid",
    "Entity",
    "FovParams",
    "HistoryEntry",
    "HttpChatModel",
    "LogicalClock",
    "Observation",
    "ParseFailure",
    "ParseOutcome",
    "Pose",
    "ScriptedModel",
    "Segment",
    "Session",
    "SessionConfig",
    "SessionResult",
    "TokenUsage",
    "ToolRegistry",
    "ToolSpec",
    "World",
    "count_tokens",
    "load_scenario",
    "load_trace",
    "model_from_spec",
    "parse_agent_message",
    "render_history",
    "render_system_prompt",
    "run_session",
    "save_trace",
    "serialize_agent_message",
    "update_coverage",
]
