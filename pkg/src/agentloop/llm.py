"""Model access: a chat-completions HTTP client and a deterministic scripted
model, both with per-call token accounting."""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import requests

from agentloop.protocol import OBSERVATION_MARKER, Segment


class ModelError(Exception):
    """Base for backend failures.  Distinct from parse failures: these are
    retryable transport/script signals, not bad model content."""


class EndpointUnreachable(ModelError):
    pass


class EndpointError(ModelError):
    pass


class ScriptExhausted(ModelError):
    pass


def count_tokens(text: str) -> int:
    """Deterministic token approximation: ceil(len/4).

    Used only by the scripted backend; never mixed with endpoint-reported
    counts in the same run.
    """
    return (len(text) + 3) // 4


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )


@dataclass
class ChatRequest:
    segments: list[Segment]
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def validate(self) -> None:
        if not self.segments:
            raise ValueError("request must contain at least one segment")
        if self.segments[0].role != "system":
            raise ValueError("first segment must be system-role")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


class ChatModel:
    """Base backend.  Subclasses implement _complete; the base records a
    per-call log so callers can audit token conservation."""

    def __init__(self) -> None:
        self.call_log: list[TokenUsage] = []
        self.request_log: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> tuple[str, TokenUsage]:
        request.validate()
        text, usage = self._complete(request)
        self.call_log.append(usage)
        self.request_log.append(request)
        return text, usage

    def _complete(self, request: ChatRequest) -> tuple[str, TokenUsage]:
        raise NotImplementedError


# Scripted responses may reference the latest tool feedback.
LAST_OBSERVATION_PLACEHOLDER = "{{last_observation}}"


class ScriptedModel(ChatModel):
    """Deterministic canned-response backend, the testing oracle.

    Responses are returned in order; usage is computed with count_tokens over
    the request segments and the response text.  The placeholder
    ``{{last_observation}}`` is substituted with the content of the most
    recent observation segment in the request.  A non-zero ``pace_s`` sleeps
    that long per call, making scripted sessions watchable from the console.
    """

    def __init__(self, responses: Sequence[str], pace_s: float = 0.0) -> None:
        super().__init__()
        if not all(isinstance(r, str) for r in responses):
            raise ValueError("script must be a sequence of response strings")
        if pace_s < 0:
            raise ValueError("pace_s must be non-negative")
        self.responses = list(responses)
        self.cursor = 0
        self.pace_s = pace_s

    @classmethod
    def from_path(cls, path: str | Path, pace_s: float = 0.0) -> ScriptedModel:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, list):
            raise ValueError(f"script file {path} must hold a JSON array of strings")
        return cls(data, pace_s=pace_s)

    def reset(self) -> None:
        self.cursor = 0

    def _complete(self, request: ChatRequest) -> tuple[str, TokenUsage]:
        if self.cursor >= len(self.responses):
            raise ScriptExhausted(
                f"script exhausted after {len(self.responses)} responses"
            )
        if self.pace_s > 0:
            time.sleep(self.pace_s)
        text = self.responses[self.cursor]
        self.cursor += 1
        if LAST_OBSERVATION_PLACEHOLDER in text:
            text = text.replace(
                LAST_OBSERVATION_PLACEHOLDER, _last_observation(request.segments)
            )
        usage = TokenUsage(
            prompt_tokens=sum(count_tokens(s.text) for s in request.segments),
            completion_tokens=count_tokens(text),
        )
        return text, usage


def _last_observation(segments: Sequence[Segment]) -> str:
    for seg in reversed(segments):
        if seg.role == "observation":
            text = seg.text
            if text.startswith(OBSERVATION_MARKER):
                text = text[len(OBSERVATION_MARKER):]
            return text
    return ""


# Roles the chat-completions wire format understands; observation segments
# travel as user turns (their text already carries the marker).
_WIRE_ROLE = {"system": "system", "user": "user", "assistant": "assistant", "observation": "user"}


class HttpChatModel(ChatModel):
    """Client for any endpoint speaking the de-facto chat-completions JSON
    shape (messages array in, choices + usage object out)."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 60.0,
    ) -> None:
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s

    @classmethod
    def from_env(cls) -> HttpChatModel:
        """Configuration keys: AGENTLOOP_ENDPOINT, AGENTLOOP_MODEL,
        AGENTLOOP_API_KEY, AGENTLOOP_TIMEOUT_S."""
        endpoint = os.environ.get("AGENTLOOP_ENDPOINT")
        model = os.environ.get("AGENTLOOP_MODEL")
        if not endpoint or not model:
            raise ValueError(
                "http backend needs AGENTLOOP_ENDPOINT and AGENTLOOP_MODEL set"
            )
        return cls(
            base_url=endpoint,
            model=model,
            api_key=os.environ.get("AGENTLOOP_API_KEY"),
            timeout_s=float(os.environ.get("AGENTLOOP_TIMEOUT_S", "60")),
        )

    def _complete(self, request: ChatRequest) -> tuple[str, TokenUsage]:
        payload = {
            "model": self.model,
            "messages": [
                {"role": _WIRE_ROLE[s.role], "content": s.text} for s in request.segments
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout_s,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise EndpointUnreachable(str(exc)) from exc
        if resp.status_code != 200:
            raise EndpointError(f"endpoint returned {resp.status_code}: {resp.text[:500]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed endpoint payload: {exc}") from exc
        usage = body.get("usage") or {}
        return text, TokenUsage(
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


def builtin_script_path(name: str) -> Path:
    """Path of a script shipped with the package (e.g. ``delivery_leo``)."""
    root = resources.files("agentloop").joinpath("scripts")
    path = Path(str(root.joinpath(f"{name}.json")))
    if not path.exists():
        raise ValueError(f"no builtin script named {name!r}")
    return path


_SCRIPTED_SPEC = re.compile(r"^scripted(?:@(\d+)ms)?:(.+)$")


def model_from_spec(spec: str) -> ChatModel:
    """Build a backend from a CLI-style spec string.

    ``scripted:<path>`` loads a JSON array of canned responses;
    ``scripted:builtin:<name>`` resolves a script shipped with the package;
    ``scripted@250ms:...`` paces the script at 250 ms per call (demo speed);
    ``http`` reads the endpoint configuration from the environment.
    """
    if spec == "http":
        return HttpChatModel.from_env()
    match = _SCRIPTED_SPEC.match(spec)
    if match:
        pace_s = int(match.group(1)) / 1000.0 if match.group(1) else 0.0
        target = match.group(2)
        if target.startswith("builtin:"):
            return ScriptedModel.from_path(
                builtin_script_path(target[len("builtin:"):]), pace_s=pace_s
            )
        return ScriptedModel.from_path(target, pace_s=pace_s)
    raise ValueError(f"unknown model spec {spec!r} (expected scripted:<path> or http)")
