"""In-process topic pub/sub bus with slash-separated topic hierarchies and
MQTT-style wildcards: `+` matches one segment, a trailing `#` matches the rest.

No persistence: late subscribers miss earlier messages.  Delivery is
per-publisher per-topic FIFO.
"""

from __future__ import annotations

import queue
import re
import threading
from typing import Any, Callable

_SEGMENT = re.compile(r"^[a-z0-9_]+$")


class TopicError(ValueError):
    pass


def validate_topic(name: str) -> list[str]:
    if not name.startswith("/"):
        raise TopicError(f"topic {name!r} must start with '/'")
    segments = name.split("/")[1:]
    if not segments or any(not _SEGMENT.match(s) for s in segments):
        raise TopicError(f"topic {name!r} must match (/[a-z0-9_]+)+")
    return segments


def validate_pattern(pattern: str) -> list[str]:
    if not pattern.startswith("/"):
        raise TopicError(f"pattern {pattern!r} must start with '/'")
    segments = pattern.split("/")[1:]
    if not segments:
        raise TopicError("empty pattern")
    for i, segment in enumerate(segments):
        if segment == "#":
            if i != len(segments) - 1:
                raise TopicError("'#' is only allowed as the final segment")
        elif segment != "+" and not _SEGMENT.match(segment):
            raise TopicError(f"bad pattern segment {segment!r}")
    return segments


def topic_matches(pattern_segments: list[str], topic_segments: list[str]) -> bool:
    for i, pat in enumerate(pattern_segments):
        if pat == "#":
            return True
        if i >= len(topic_segments):
            return False
        if pat != "+" and pat != topic_segments[i]:
            return False
    return len(pattern_segments) == len(topic_segments)


class Subscription:
    """A live stream of (topic, payload) pairs matching one pattern.

    Messages arrive on an internal queue unless the subscription was created
    with a callback, in which case the publisher's thread delivers directly
    and the callback must not block.
    """

    def __init__(
        self,
        bus: TopicBus,
        pattern: str,
        callback: Callable[[str, Any], None] | None = None,
    ) -> None:
        self.pattern = pattern
        self._segments = validate_pattern(pattern)
        self._bus = bus
        self._callback = callback
        self._queue: queue.Queue[tuple[str, Any]] = queue.Queue()
        self.closed = False

    def _deliver(self, topic: str, payload: Any) -> None:
        if self._callback is not None:
            self._callback(topic, payload)
        else:
            self._queue.put((topic, payload))

    def get(self, timeout: float | None = None) -> tuple[str, Any]:
        """Next message; raises queue.Empty on timeout."""
        return self._queue.get(timeout=timeout)

    def drain(self) -> list[tuple[str, Any]]:
        out = []
        while True:
            try:
                out.append(self._queue.get_nowait())
            except queue.Empty:
                return out

    def close(self) -> None:
        self._bus.unsubscribe(self)


class TopicBus:
    """Thread-safe fan-out hub.  Publishing with zero subscribers is accepted
    and the message is dropped."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._subscriptions: list[Subscription] = []

    def subscribe(
        self, pattern: str, callback: Callable[[str, Any], None] | None = None
    ) -> Subscription:
        sub = Subscription(self, pattern, callback)
        with self._lock:
            self._subscriptions.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            sub.closed = True
            try:
                self._subscriptions.remove(sub)
            except ValueError:
                pass

    def publish(self, topic: str, payload: Any) -> int:
        """Deliver to every live matching subscriber; returns how many."""
        segments = validate_topic(topic)
        with self._lock:
            targets = [s for s in self._subscriptions if topic_matches(s._segments, segments)]
        for sub in targets:
            sub._deliver(topic, payload)
        return len(targets)
