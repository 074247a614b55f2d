"""Topic-based publish/subscribe fabric.

The in-memory broker delivers exactly once with per-topic FIFO order and
blocks publishers when a subscriber queue is full. ``BrokerAdapter`` is the
seam for an external broker; such adapters promise at-least-once delivery,
so consumers dedupe (agents key readings by (room, timestamp)).

Topic scheme: ``sensors/<room>/readings``, ``sensors/<room>/telemetry``,
``fleet/<device>/control``, ``fleet/<device>/drift``.

Payloads are UTF-8 text: a ``type:<kind>`` line followed by ``key:value`` lines.
"""

from __future__ import annotations

import abc
import collections
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

from .errors import BrokerClosed, DecodeError, InvalidTopic, WildcardInPublish
from .pipeline import READING_COLUMNS, SensorReading, parse_reading

DEFAULT_QUEUE_SIZE = 10_000
PAYLOAD_TYPES = ("reading", "telemetry", "control", "drift")


def readings_topic(room: str) -> str:
    return f"sensors/{room}/readings"


def telemetry_topic(room: str) -> str:
    return f"sensors/{room}/telemetry"


def control_topic(device_id: str) -> str:
    return f"fleet/{device_id}/control"


def drift_topic(device_id: str) -> str:
    return f"fleet/{device_id}/drift"


def _segments(topic: str) -> list[str]:
    if not topic:
        raise InvalidTopic("topic must be non-empty")
    parts = topic.split("/")
    if any(p == "" for p in parts):
        raise InvalidTopic(f"topic {topic!r} has an empty segment")
    return parts


def validate_publish_topic(topic: str) -> None:
    if "+" in _segments(topic) or "+" in topic:
        raise WildcardInPublish(f"cannot publish to wildcard topic {topic!r}")


def validate_pattern(pattern: str) -> None:
    for seg in _segments(pattern):
        if "+" in seg and seg != "+":
            raise InvalidTopic(f"'+' must occupy a whole segment in {pattern!r}")


def topic_matches(pattern: str, topic: str) -> bool:
    """Single-level ``+`` wildcard matching, segment by segment."""
    p, t = pattern.split("/"), topic.split("/")
    return len(p) == len(t) and all(a == "+" or a == b for a, b in zip(p, t))


@dataclass(frozen=True)
class Message:
    topic: str
    payload: bytes
    published_at: float
    sequence_no: int


class Subscription:
    """Bounded FIFO of messages matching one pattern, owned by a single consumer."""

    def __init__(self, broker: Broker, pattern: str, maxsize: int) -> None:
        self.pattern = pattern
        self._broker = broker
        self._queue: collections.deque[Message] = collections.deque()
        self._maxsize = maxsize
        self._cond = threading.Condition()
        self._closed = False

    def _offer(self, message: Message) -> None:
        with self._cond:
            while len(self._queue) >= self._maxsize and not self._closed:
                self._cond.wait()
            if self._closed:
                return
            self._queue.append(message)
            self._cond.notify_all()

    def receive(self, timeout: float | None = None) -> Message | None:
        """Next message; blocks (up to ``timeout`` seconds) and returns None on timeout."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._queue:
                if self._closed:
                    raise BrokerClosed("subscription closed")
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return None
                self._cond.wait(remaining)
            message = self._queue.popleft()
            self._cond.notify_all()
            return message

    def poll(self) -> Message | None:
        with self._cond:
            if not self._queue:
                return None
            message = self._queue.popleft()
            self._cond.notify_all()
            return message

    def drain(self) -> list[Message]:
        with self._cond:
            items = list(self._queue)
            self._queue.clear()
            self._cond.notify_all()
            return items

    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    def __iter__(self) -> Iterator[Message]:
        while True:
            try:
                yield self.receive()  # type: ignore[misc]
            except BrokerClosed:
                return

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._broker._unsubscribe(self)


class Broker:
    """In-memory broker. No retained messages: subscribers only see later publishes."""

    def __init__(
        self,
        queue_size: int = DEFAULT_QUEUE_SIZE,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.queue_size = queue_size
        self._clock = clock
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._seq: dict[str, int] = collections.defaultdict(int)
        self._routes: dict[str, list[Subscription]] = {}  # topic -> matching subscriptions
        self._closed = False

    def publish(self, topic: str, payload: bytes) -> int:
        validate_publish_topic(topic)
        # the lock spans delivery so each topic's order is the same in every queue
        with self._lock:
            if self._closed:
                raise BrokerClosed("broker is closed")
            self._seq[topic] += 1
            message = Message(topic, bytes(payload), self._clock(), self._seq[topic])
            targets = self._routes.get(topic)
            if targets is None:
                targets = self._routes[topic] = [s for s in self._subs if topic_matches(s.pattern, topic)]
            for sub in targets:
                sub._offer(message)
        return message.sequence_no

    def subscribe(self, pattern: str, maxsize: int | None = None) -> Subscription:
        validate_pattern(pattern)
        with self._lock:
            if self._closed:
                raise BrokerClosed("broker is closed")
            sub = Subscription(self, pattern, maxsize or self.queue_size)
            self._subs.append(sub)
            self._routes.clear()
            return sub

    def _unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)
                self._routes.clear()

    def close(self) -> None:
        with self._lock:
            self._closed = True
            subs = list(self._subs)
        for sub in subs:
            with sub._cond:
                sub._closed = True
                sub._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed


def publish(broker: Broker, topic: str, payload: bytes) -> int:
    return broker.publish(topic, payload)


def subscribe(broker: Broker, pattern: str) -> Subscription:
    return broker.subscribe(pattern)


class BrokerAdapter(abc.ABC):
    """What agents and controllers need from a message fabric.

    Implementations backed by a networked broker deliver at-least-once.
    """

    @abc.abstractmethod
    def connect(self) -> None: ...

    @abc.abstractmethod
    def publish(self, topic: str, payload: bytes) -> int: ...

    @abc.abstractmethod
    def subscribe(self, pattern: str) -> Subscription: ...

    @abc.abstractmethod
    def disconnect(self) -> None: ...


class InMemoryAdapter(BrokerAdapter):
    def __init__(self, broker: Broker | None = None) -> None:
        self.broker = broker or Broker()
        self._connected = False

    def connect(self) -> None:
        self._connected = True

    def publish(self, topic: str, payload: bytes) -> int:
        if not self._connected:
            raise BrokerClosed("adapter not connected")
        return self.broker.publish(topic, payload)

    def subscribe(self, pattern: str) -> Subscription:
        if not self._connected:
            raise BrokerClosed("adapter not connected")
        return self.broker.subscribe(pattern)

    def disconnect(self) -> None:
        self._connected = False


# --------------------------------------------------------------------------- payloads


def encode_payload(kind: str, fields: Mapping[str, object]) -> bytes:
    if kind not in PAYLOAD_TYPES:
        raise ValueError(f"unknown payload type {kind!r}")
    lines = [f"type:{kind}"]
    for key, value in fields.items():
        text = str(value)
        if "\n" in text or ":" in key:
            raise ValueError(f"field {key!r} cannot be encoded on one line")
        lines.append(f"{key}:{text}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_payload(data: bytes) -> tuple[str, dict[str, str]]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError("payload is not UTF-8") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("type:"):
        raise DecodeError("payload must start with a type line")
    kind = lines[0][len("type:") :]
    if kind not in PAYLOAD_TYPES:
        raise DecodeError(f"unknown payload type {kind!r}")
    fields: dict[str, str] = {}
    for line in lines[1:]:
        key, colon, value = line.partition(":")
        if not colon or not key:
            raise DecodeError(f"malformed payload line {line!r}")
        if key in fields:
            raise DecodeError(f"duplicate payload key {key!r}")
        fields[key] = value
    return kind, fields


def encode_reading(reading: SensorReading) -> bytes:
    return encode_payload("reading", reading.to_record())


def decode_reading(data: bytes) -> SensorReading:
    kind, fields = decode_payload(data)
    if kind != "reading":
        raise DecodeError(f"expected a reading payload, got {kind!r}")
    missing = [c for c in READING_COLUMNS if c not in fields]
    if missing:
        raise DecodeError(f"reading payload lacks {missing}")
    try:
        return parse_reading(fields)
    except ValueError as exc:
        raise DecodeError(str(exc)) from exc


def encode_control(model_version: int, command: str = "deploy") -> bytes:
    return encode_payload("control", {"command": command, "model_version": model_version})


def decode_control(data: bytes) -> tuple[str, int]:
    kind, fields = decode_payload(data)
    if kind != "control":
        raise DecodeError(f"expected a control payload, got {kind!r}")
    try:
        return fields["command"], int(fields["model_version"])
    except (KeyError, ValueError) as exc:
        raise DecodeError(f"bad control payload: {exc}") from exc


def encode_drift(rmse: float, triggered: bool, model_version: int, **extra: object) -> bytes:
    fields: dict[str, object] = {
        "rmse": repr(float(rmse)),
        "triggered": "true" if triggered else "false",
        "model_version": model_version,
    }
    fields.update(extra)
    return encode_payload("drift", fields)


def decode_drift(data: bytes) -> dict[str, object]:
    kind, fields = decode_payload(data)
    if kind != "drift":
        raise DecodeError(f"expected a drift payload, got {kind!r}")
    try:
        out: dict[str, object] = dict(fields)
        out["rmse"] = float(fields["rmse"])
        out["triggered"] = {"true": True, "false": False}[fields["triggered"]]
        out["model_version"] = int(fields["model_version"])
        return out
    except (KeyError, ValueError) as exc:
        raise DecodeError(f"bad drift payload: {exc}") from exc
