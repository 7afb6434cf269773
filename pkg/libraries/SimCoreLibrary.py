"""
Simulation Core Library for the Narses flow-level network simulator
Provides the simulation clock, the ordered event queue and the dispatch loop
"""
import heapq
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple, Type

_INF = math.inf


# Base exceptions for every simulator component
class NarsesError(Exception):
    """Base exception for all simulator errors"""


class SimulationError(NarsesError):
    """Raised when the event engine is driven incorrectly"""


class SchedulingInPast(SimulationError):
    """Raised when an event is scheduled before the current clock"""


class InvalidSimTime(SimulationError):
    """Raised for NaN, infinite or negative timestamps"""


class UnhandledEvent(SimulationError):
    """Raised when the dispatcher has no handler for a payload kind"""


def sim_time(value: Any) -> float:
    """
    Validates a simulation timestamp

    Args:
        value: Seconds of simulation time

    Returns:
        The timestamp as a float
    """
    try:
        seconds = float(value)
    except (TypeError, ValueError) as err:
        raise InvalidSimTime(f"Not a simulation time: {value!r}") from err
    if not math.isfinite(seconds) or seconds < 0:
        raise InvalidSimTime(f"Simulation time must be finite and >= 0, got {seconds}")
    return seconds


# Event payloads
class FlowStart(NamedTuple):
    """A message handed to the transport; flow_id is set when the id was reserved earlier"""
    message: Any
    flow_id: Optional[int] = None


class FlowCompletion(NamedTuple):
    """Last byte of a flow transmitted, valid only while version matches"""
    flow_id: int
    version: int


class FlowDelivery(NamedTuple):
    """Flow fully received at its destination"""
    flow_id: int


class Event(NamedTuple):
    """Timestamped occurrence; (time, seq) orders the queue"""
    time: float
    seq: int
    payload: Any


@dataclass(frozen=True)
class RunSummary:
    """Counters describing one run of the dispatch loop"""
    events: int
    clock: float
    high_water_mark: int
    scheduled: int = 0
    remaining: int = 0


class EventQueue:
    """
    Priority queue of events keyed by (time, seq)

    Equal-time events pop in the order they were scheduled. The queue owns
    the simulation clock, which only moves forward when an event is popped.
    """

    def __init__(self):
        self._heap: List[Event] = []
        self._seq = 0
        self.clock = 0.0
        self.high_water_mark = 0
        self.scheduled = 0

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def schedule(self, time: float, payload: Any) -> Event:
        """
        Inserts a payload at the given simulation time

        Args:
            time: Event timestamp in seconds, not earlier than the clock
            payload: One of FlowStart, FlowCompletion, FlowDelivery

        Returns:
            The queued Event
        """
        if not self.clock <= time < _INF:
            if time != time or time == _INF:
                raise InvalidSimTime(f"Cannot schedule at {time}")
            raise SchedulingInPast(
                f"Event at t={time!r} is earlier than clock t={self.clock!r}: {payload!r}"
            )
        event = Event(time, self._seq, payload)
        self._seq += 1
        self.scheduled += 1
        heap = self._heap
        heapq.heappush(heap, event)
        if len(heap) > self.high_water_mark:
            self.high_water_mark = len(heap)
        return event

    def next_event(self) -> Optional[Event]:
        """Removes the minimal event and advances the clock to its time"""
        if not self._heap:
            return None
        event = heapq.heappop(self._heap)
        self.clock = event.time
        return event

    def peek_time(self) -> Optional[float]:
        """Timestamp of the next event without removing it"""
        return self._heap[0].time if self._heap else None


class Simulator:
    """
    Discrete-event engine: an event queue plus a dispatch loop

    Handlers are looked up by payload type and called as
    handler(payload, now). They may schedule further events.
    """

    def __init__(self, record_events: bool = False):
        self.queue = EventQueue()
        self.events_dispatched = 0
        self.event_log: Optional[List[Tuple[float, int, str]]] = [] if record_events else None

    @property
    def now(self) -> float:
        return self.queue.clock

    def schedule(self, time: float, payload: Any) -> Event:
        return self.queue.schedule(time, payload)

    def summary(self) -> RunSummary:
        """Counters as of now; valid after a run was aborted by a handler error"""
        return RunSummary(
            events=self.events_dispatched,
            clock=self.queue.clock,
            high_water_mark=self.queue.high_water_mark,
            scheduled=self.queue.scheduled,
            remaining=len(self.queue),
        )

    def run(self, dispatcher: Dict[Type, Callable[[Any, float], Any]],
            until: Optional[float] = None) -> RunSummary:
        """
        Dispatches events until the queue is empty

        Args:
            dispatcher: Mapping of payload type to handler
            until: Stop before the first event later than this time

        Returns:
            RunSummary with exact counters
        """
        queue = self.queue
        log = self.event_log
        handlers = dict(dispatcher)
        while queue:
            if until is not None and queue.peek_time() > until:
                break
            event = queue.next_event()
            payload = event.payload
            handler = handlers.get(type(payload))
            if handler is None:
                raise UnhandledEvent(f"No handler for {type(payload).__name__}")
            self.events_dispatched += 1
            if log is not None:
                log.append((event.time, event.seq, type(payload).__name__))
            handler(payload, event.time)
        return self.summary()
