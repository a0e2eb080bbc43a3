"""Deterministic discrete-event kernel.

Events are delivered in ``(fire_time, id)`` order, so equal timestamps fall
back to insertion order.  Handling an event takes zero simulated time.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Protocol


class SimulationError(RuntimeError):
    """Fatal inconsistency inside a simulation run."""


class MessageKind(str, enum.Enum):
    PHOTON_ARRIVAL = "photon-arrival"
    BSM_RESULT = "bsm-result"
    SETUP_REQUEST = "connection-setup-request"
    SETUP_RESPONSE = "connection-setup-response"
    SETUP_REJECT = "connection-setup-reject"
    TEARDOWN = "connection-teardown"
    SWAP_RESULT = "swap-result"
    PURIFICATION_PARITY = "purification-parity"
    TOMOGRAPHY_RESULT = "tomography-result"
    TIMER = "internal-timer"


# field name -> codec type; every message of a kind carries exactly these
_PAIR = "pair"
_PAIRS = "pairs"
SCHEMAS: dict[MessageKind, dict[str, str]] = {
    MessageKind.PHOTON_ARRIVAL: {
        "link": "int", "side": "int", "train": "int", "slot": "int", "qubit": "int", "lost": "bool",
    },
    MessageKind.BSM_RESULT: {
        "link": "int", "train": "int", "results": "json", "next_train_at": "float",
    },
    MessageKind.SETUP_REQUEST: {
        "connection": "int", "attempt": "int", "initiator": "str", "responder": "str",
        "hops": "json", "pair_count": "int", "target_fidelity": "float",
    },
    MessageKind.SETUP_RESPONSE: {"connection": "int", "attempt": "int", "ruleset": "json"},
    MessageKind.SETUP_REJECT: {"connection": "int", "attempt": "int", "path": "json", "rejected_by": "str"},
    MessageKind.TEARDOWN: {"connection": "int"},
    MessageKind.SWAP_RESULT: {
        "ruleset": "int", "swapper": "str", "left": _PAIRS, "right": _PAIRS,
        "correction": "bits", "success": "bool",
    },
    MessageKind.PURIFICATION_PARITY: {
        "ruleset": "int", "rule": "str", "stage": "str", "kept": _PAIR, "sacrificed": _PAIR,
        "basis": "str", "bit": "int",
    },
    MessageKind.TOMOGRAPHY_RESULT: {
        "ruleset": "int", "stage": "str", "pair": _PAIR, "combo": "int", "basis": "str",
        "outcome": "int", "lost": "bool",
    },
    MessageKind.TIMER: {"tag": "str", "data": "json"},
}


@dataclass(slots=True)
class Message:
    kind: MessageKind
    src: str
    fields: dict[str, Any]

    def __getitem__(self, key):
        return self.fields[key]

    def validate(self) -> "Message":
        schema = SCHEMAS[self.kind]
        if set(schema) != set(self.fields):
            missing = set(schema) - set(self.fields)
            extra = set(self.fields) - set(schema)
            raise SimulationError(f"{self.kind.value}: missing {sorted(missing)} extra {sorted(extra)}")
        return self


def make(kind: MessageKind, src: str, **fields) -> Message:
    return Message(kind, src, fields)


def _enc(kind_of: str, value):
    if kind_of == _PAIR:
        return list(value)
    if kind_of == _PAIRS:
        return [list(p) for p in value]
    if kind_of == "bits":
        return list(value)
    return value


def _dec(kind_of: str, value):
    if kind_of == _PAIR:
        return tuple(value)
    if kind_of == _PAIRS:
        return tuple(tuple(p) for p in value)
    if kind_of == "bits":
        return tuple(value)
    if kind_of == "float":
        return float(value)
    return value


def encode(msg: Message) -> str:
    msg.validate()
    schema = SCHEMAS[msg.kind]
    body = {k: _enc(schema[k], v) for k, v in msg.fields.items()}
    return json.dumps({"kind": msg.kind.value, "src": msg.src, "fields": body}, sort_keys=True)


def decode(text: str) -> Message:
    raw = json.loads(text)
    kind = MessageKind(raw["kind"])
    schema = SCHEMAS[kind]
    fields = {k: _dec(schema[k], v) for k, v in raw["fields"].items()}
    return Message(kind, raw["src"], fields).validate()


@dataclass(slots=True)
class Event:
    fire_time: float
    destination: str
    payload: Message
    id: int = -1


class Module(Protocol):
    def handle(self, event: Event) -> None: ...


@dataclass
class KernelStats:
    events_processed: int = 0
    final_time: float = 0.0
    wall_clock_seconds: float = 0.0
    cpu_seconds: float = 0.0
    stopped_by: str = "empty"

    @property
    def events_per_second(self) -> float:
        return self.events_processed / self.wall_clock_seconds if self.wall_clock_seconds > 0 else 0.0


class Kernel:
    """Timestamp-ordered event queue delivering messages to named modules."""

    def __init__(self, trace: Callable[[Event], None] | None = None):
        self._queue: list[tuple[float, int, Event]] = []
        self._next_id = 0
        self._now = 0.0
        self._stop = False
        self.modules: dict[str, Module] = {}
        self.trace = trace
        self.stats = KernelStats()

    def register(self, name: str, module: Module) -> None:
        if name in self.modules:
            raise SimulationError(f"module {name!r} registered twice")
        self.modules[name] = module

    def now(self) -> float:
        return self._now

    def pending(self) -> int:
        return len(self._queue)

    def schedule(self, event: Event) -> int:
        if not event.fire_time >= self._now:  # also rejects NaN
            raise SimulationError(
                f"event for {event.destination} at t={event.fire_time!r} is before now={self._now!r}"
            )
        event.id = self._next_id
        self._next_id += 1
        heapq.heappush(self._queue, (event.fire_time, event.id, event))
        return event.id

    def send(self, delay: float, destination: str, msg: Message) -> int:
        return self.schedule(Event(self._now + delay, destination, msg))

    def stop(self) -> None:
        """Ask the running loop to return after the current event."""
        self._stop = True

    def run_until(self, time_limit: float = math.inf, max_events: int | None = None) -> KernelStats:
        """Process events with ``fire_time <= time_limit``; returns cumulative stats."""
        stats = self.stats
        queue = self._queue
        modules = self.modules
        trace = self.trace
        pop = heapq.heappop
        self._stop = False
        budget = math.inf if max_events is None else max_events
        processed = 0
        stats.stopped_by = "empty"
        t_wall, t_cpu = time.perf_counter(), time.process_time()
        try:
            while queue:
                if processed >= budget:
                    stats.stopped_by = "event-limit"
                    break
                if queue[0][0] > time_limit:
                    stats.stopped_by = "time-limit"
                    break
                fire_time, _, event = pop(queue)
                self._now = fire_time
                if trace is not None:
                    trace(event)
                try:
                    module = modules[event.destination]
                except KeyError:
                    raise SimulationError(f"no module named {event.destination!r}") from None
                module.handle(event)
                processed += 1
                if self._stop:
                    stats.stopped_by = "stopped"
                    break
        finally:
            stats.events_processed += processed
            stats.final_time = self._now
            stats.wall_clock_seconds += time.perf_counter() - t_wall
            stats.cpu_seconds += time.process_time() - t_cpu
        return stats


def trace_line(event: Event) -> str:
    p = event.payload
    return f"{event.id} {event.fire_time!r} {event.destination} {p.kind.value} {p.src}"


class TraceRecorder:
    """Collects one text line per delivered event."""

    def __init__(self):
        self.lines: list[str] = []

    def __call__(self, event: Event) -> None:
        self.lines.append(trace_line(event))

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")
