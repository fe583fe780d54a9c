"""In-process publish/subscribe with bounded, oldest-drop subscriber queues."""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, Iterable, List, Optional, Set

DEFAULT_QUEUE_SIZE = 1024


@dataclass(frozen=True)
class TimestampedMsg:
    t_us: int
    topic: str
    payload: Any


class Closed(Exception):
    """Raised by a blocking get on a closed, drained subscription."""


class Subscription:
    def __init__(self, bus: "Bus", topics: Iterable[str], maxlen: int):
        self._bus = bus
        self.topics: Set[str] = set(topics)
        self._q: Deque[TimestampedMsg] = deque()
        self.maxlen = maxlen
        self.dropped = 0

    def _put(self, msg):
        if len(self._q) >= self.maxlen:
            self._q.popleft()
            self.dropped += 1
        self._q.append(msg)

    def __len__(self):
        return len(self._q)

    def get_nowait(self) -> Optional[TimestampedMsg]:
        with self._bus._cond:
            return self._q.popleft() if self._q else None

    def get(self, timeout: Optional[float] = None) -> Optional[TimestampedMsg]:
        """Block until a message arrives. Returns None on timeout, raises Closed once drained after close."""
        with self._bus._cond:
            if not self._bus._cond.wait_for(lambda: self._q or self._bus.closed, timeout):
                return None
            if self._q:
                return self._q.popleft()
            raise Closed()

    def drain(self) -> List[TimestampedMsg]:
        with self._bus._cond:
            out = list(self._q)
            self._q.clear()
            return out

    def __iter__(self):
        while True:
            try:
                yield self.get()
            except Closed:
                return


class Bus:
    """Each subscription keeps its own FIFO; a full queue discards its oldest message."""

    def __init__(self, topics: Iterable[str], queue_size: int = DEFAULT_QUEUE_SIZE):
        self.topics: Set[str] = set(topics)
        self.queue_size = queue_size
        self._subs: Dict[str, List[Subscription]] = {t: [] for t in self.topics}
        self._cond = threading.Condition()
        self.closed = False

    def declare(self, topic: str) -> None:
        with self._cond:
            self.topics.add(topic)
            self._subs.setdefault(topic, [])

    def subscribe(self, *topics: str, queue_size: Optional[int] = None) -> Subscription:
        unknown = set(topics) - self.topics
        if unknown:
            raise KeyError(f"undeclared topic(s): {sorted(unknown)}")
        sub = Subscription(self, topics, queue_size or self.queue_size)
        with self._cond:
            for t in topics:
                self._subs[t].append(sub)
        return sub

    def publish(self, topic: str, msg: TimestampedMsg) -> None:
        if topic not in self.topics:
            raise KeyError(f"publish to undeclared topic {topic!r}")
        with self._cond:
            if self.closed:
                raise RuntimeError("publish on a closed bus")
            for sub in self._subs[topic]:
                sub._put(msg)
            self._cond.notify_all()

    def close(self) -> None:
        """Broadcast shutdown; subscribers drain what is queued, then see Closed."""
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    @property
    def dropped(self) -> int:
        with self._cond:
            subs = {id(s): s for lst in self._subs.values() for s in lst}
            return sum(s.dropped for s in subs.values())
