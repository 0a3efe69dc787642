"""structured run events: controller faults, aborts, suite progress.

events are plain dicts so a run's history can be dumped straight to events.json.
timestamps come from an injectable clock; the simulator hands in its simulated-time
clock so the dump of a seeded run is reproducible
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from collections.abc import Callable
from threading import Lock

logger = logging.getLogger(__name__)

EventValue = int | float | str | bool | None
EventDict = dict[str, EventValue | dict[str, EventValue]]
EventListener = Callable[[EventDict], None]
Clock = Callable[[], float]

DEFAULT_MAX_EVENTS = 2000

_LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING, "error": logging.ERROR}


def _zero_clock() -> float:
    return 0.0


class EventLogger:
    def __init__(
        self, max_events: int = DEFAULT_MAX_EVENTS, clock: Clock | None = None, scenario: str | None = None
    ) -> None:
        self.events: deque[EventDict] = deque(maxlen=max_events)
        self.lock = Lock()
        self.listeners: list[EventListener] = []
        self.clock: Clock = clock if clock is not None else _zero_clock
        self.scenario = scenario
        self._ids = itertools.count(1)

    def log_event(
        self,
        event_type: str,
        message: str,
        level: str = "info",
        metadata: dict[str, EventValue] | None = None,
    ) -> EventDict:
        with self.lock:
            event_id = next(self._ids)
        event: EventDict = {
            "id": event_id,
            "timestamp": float(self.clock()),
            "type": event_type,
            "level": level,
            "message": message,
            "scenario": self.scenario,
            "metadata": dict(metadata or {}),
        }
        self._record(event)

        where = f" scenario {self.scenario}:" if self.scenario else ""
        logger.log(_LOG_LEVELS.get(level, logging.INFO), f"[{event_type}]{where} {message}")
        return event

    def _record(self, event: EventDict) -> None:
        with self.lock:
            self.events.append(event)
            listeners = tuple(self.listeners)

        broken = []
        for listener in listeners:
            try:
                listener(event)
            except Exception as e:
                logger.warning(f"event listener failed, dropping it: {e}")
                broken.append(listener)
        for listener in broken:
            self.remove_listener(listener)

    def get_recent_events(self, limit: int = 100) -> list[EventDict]:
        """newest `limit` events, oldest first; 0 returns the whole history"""
        with self.lock:
            history = list(self.events)
        return history[-limit:] if limit > 0 else history

    def count(self, event_type: str) -> int:
        with self.lock:
            return sum(e["type"] == event_type for e in self.events)

    def add_listener(self, callback: EventListener) -> None:
        with self.lock:
            self.listeners.append(callback)

    def remove_listener(self, callback: EventListener) -> None:
        with self.lock:
            if callback in self.listeners:
                self.listeners.remove(callback)


# suite-level events; each run gets its own logger on simulated time
event_logger = EventLogger()
