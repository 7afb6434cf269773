"""
Transport Library for the Narses flow-level network simulator
Socket-like send/listen interface between simulated applications and the network model
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

from libraries.FlowModelLibrary import DeliveryRecord, NetworkModel, UnknownHost
from libraries.SimCoreLibrary import (
    FlowCompletion,
    FlowDelivery,
    FlowStart,
    NarsesError,
    RunSummary,
    Simulator,
    sim_time,
)

DeliveryHandler = Callable[[DeliveryRecord], Any]


# Custom exceptions for transport operations
class TransportError(NarsesError):
    """Base exception for transport operations"""


class PortInUse(TransportError):
    """Raised when a (host, port) pair already has a listener"""


class UnboundPort(TransportError):
    """Raised when traffic is addressed to a (host, port) nobody listens on"""


@dataclass(frozen=True)
class Listener:
    host: int
    port: int
    handler: DeliveryHandler


@dataclass(frozen=True)
class Message:
    """Bytes handed to the transport; one message becomes one flow"""
    size: int
    src: int
    dst: int
    dst_port: int = 0
    tag: Any = None


class Transport:
    """
    Message-oriented transport over a network model

    Sends never advance the caller's clock. Handlers run inline while the
    delivery event is dispatched and may send further messages.
    """

    def __init__(self, simulator: Simulator, model: NetworkModel, setup_delay: float = 0.0):
        self.sim = simulator
        self.model = model
        self.setup_delay = sim_time(setup_delay)
        self.listeners: Dict[Tuple[int, int], Listener] = {}
        self._opened_at: Dict[int, float] = {}
        self.sends = 0
        self.deliveries = 0

    def listen(self, host: int, port: int, handler: DeliveryHandler) -> Listener:
        """
        Binds a delivery handler to (host, port)

        Raises:
            UnknownHost: host is not an end host of the model
            PortInUse: (host, port) already bound
        """
        if host not in self.model.access:
            raise UnknownHost(f"Cannot listen on host {host}: not an end host")
        key = (host, port)
        if key in self.listeners:
            raise PortInUse(f"Port {port} on host {host} is already bound")
        listener = Listener(host, port, handler)
        self.listeners[key] = listener
        return listener

    def close(self, listener: Listener) -> None:
        key = (listener.host, listener.port)
        if self.listeners.get(key) is not listener:
            raise UnboundPort(f"Port {listener.port} on host {listener.host} is not bound by this listener")
        del self.listeners[key]

    def send(self, message: Message, now: Optional[float] = None) -> int:
        """
        Opens one flow carrying the message

        Args:
            message: Size, endpoints, destination port and tag
            now: Send time; defaults to the simulator clock

        Returns:
            The flow id, known before the transfer starts
        """
        if now is None:
            now = self.sim.now
        self.model.validate_request(message.src, message.dst, message.size)
        if (message.dst, message.dst_port) not in self.listeners:
            raise UnboundPort(f"No listener on host {message.dst} port {message.dst_port}")
        self.sends += 1
        if self.setup_delay > 0:
            flow_id = self.model.reserve_id()
            self._opened_at[flow_id] = now
            self.sim.schedule(now + self.setup_delay, FlowStart(message, flow_id))
            return flow_id
        return self._start(message, now, None, now)

    def _start(self, message: Message, now: float, flow_id: Optional[int], opened_at: float) -> int:
        return self.model.start_flow(
            message.src, message.dst, message.size, now,
            flow_id=flow_id, tag=message.tag, dst_port=message.dst_port, opened_at=opened_at,
        )

    def deliver(self, record: DeliveryRecord) -> None:
        """Hands a completed flow to its listener; exactly once per flow"""
        listener = self.listeners.get((record.dst, record.dst_port))
        if listener is None:
            raise UnboundPort(f"Flow {record.flow_id} arrived at unbound port {record.dst_port} on host {record.dst}")
        self.deliveries += 1
        listener.handler(record)

    def on_flow_start(self, payload: FlowStart, now: float) -> None:
        # no reserved id: an application send scheduled ahead of time
        if payload.flow_id is None:
            self.send(payload.message, now)
            return
        opened_at = self._opened_at.pop(payload.flow_id, now)
        self._start(payload.message, now, payload.flow_id, opened_at)

    def on_flow_completion(self, payload: FlowCompletion, now: float) -> None:
        record = self.model.on_completion(payload.flow_id, payload.version, now)
        if record is not None:
            self.deliver(record)

    def on_flow_delivery(self, payload: FlowDelivery, now: float) -> None:
        self.deliver(self.model.on_delivery(payload.flow_id, now))

    def dispatcher(self) -> Dict[type, Callable[[Any, float], None]]:
        return {
            FlowStart: self.on_flow_start,
            FlowCompletion: self.on_flow_completion,
            FlowDelivery: self.on_flow_delivery,
        }

    def run(self, until: Optional[float] = None) -> RunSummary:
        return self.sim.run(self.dispatcher(), until=until)
